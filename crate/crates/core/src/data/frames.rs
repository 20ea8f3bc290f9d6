//! Operations on videos stored as `(T, H, W, C)` tensors.

use crate::error::{Error, Result};
use crate::tensor::{derive_seed, fnv1a64, Rng, Tensor};

fn dims(video: &Tensor<f32>) -> Result<[usize; 4]> {
    match *video.shape() {
        [t, h, w, c] => Ok([t, h, w, c]),
        ref s => Err(Error::InvalidInput(format!("video must be (T, H, W, C), got {s:?}"))),
    }
}

/// Indices of up to `n` frames out of `total`, chosen uniformly without
/// replacement and returned in increasing order. Deterministic in
/// `(seed, id)`.
pub fn sample_indices(total: usize, n: usize, seed: u64, id: &str) -> Result<Vec<usize>> {
    if total == 0 {
        return Err(Error::InvalidInput(format!("video {id:?} has no frames")));
    }
    if total <= n {
        return Ok((0..total).collect());
    }
    let mut rng = Rng::new(derive_seed(seed, &[fnv1a64(id.as_bytes())]));
    let mut idx = rng.choose_indices(total, n);
    idx.sort_unstable();
    Ok(idx)
}

/// Copy the listed frames, in the given order.
pub fn select_frames(video: &Tensor<f32>, indices: &[usize]) -> Result<Tensor<f32>> {
    let [t, h, w, c] = dims(video)?;
    let frame = h * w * c;
    let mut out = Vec::with_capacity(indices.len() * frame);
    for &i in indices {
        if i >= t {
            return Err(Error::InvalidArgument(format!("frame {i} out of range for {t} frames")));
        }
        out.extend_from_slice(&video.data()[i * frame..(i + 1) * frame]);
    }
    Tensor::new(&[indices.len(), h, w, c], out)
}

/// Randomly keep at most `n` frames in temporal order.
pub fn sample_frames(video: &Tensor<f32>, n: usize, seed: u64, id: &str) -> Result<Tensor<f32>> {
    let idx = sample_indices(dims(video)?[0], n, seed, id)?;
    select_frames(video, &idx)
}

/// Truncate to the first `n` frames or pad by repeating the last one.
pub fn pad_truncate(video: &Tensor<f32>, n: usize) -> Result<Tensor<f32>> {
    let t = dims(video)?[0];
    if n == 0 {
        return Err(Error::InvalidArgument("target frame count must be >= 1".into()));
    }
    if t == n {
        return Ok(video.clone());
    }
    let idx: Vec<usize> = (0..n).map(|i| i.min(t - 1)).collect();
    select_frames(video, &idx)
}

/// Bilinear resize of one `(H, W, C)` frame with half-pixel centers.
pub fn resize_frame(frame: &[f32], src: [usize; 2], channels: usize, dst: [usize; 2]) -> Result<Vec<f32>> {
    let [sh, sw] = src;
    let [dh, dw] = dst;
    if dh == 0 || dw == 0 || sh == 0 || sw == 0 || channels == 0 {
        return Err(Error::InvalidArgument(format!("cannot resize {sh}x{sw} to {dh}x{dw}")));
    }
    if frame.len() != sh * sw * channels {
        return Err(Error::ShapeMismatch(format!(
            "frame of {} values is not {sh}x{sw}x{channels}",
            frame.len()
        )));
    }
    if src == dst {
        return Ok(frame.to_vec());
    }
    let axis = |d: usize, s: usize| -> Vec<(usize, usize, f32)> {
        let scale = s as f64 / d as f64;
        (0..d)
            .map(|i| {
                let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (s - 1) as f64);
                let lo = x.floor() as usize;
                let hi = (lo + 1).min(s - 1);
                (lo, hi, (x - lo as f64) as f32)
            })
            .collect()
    };
    let rows = axis(dh, sh);
    let cols = axis(dw, sw);
    let mut out = Vec::with_capacity(dh * dw * channels);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            for ch in 0..channels {
                let at = |y: usize, x: usize| frame[(y * sw + x) * channels + ch];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    Ok(out)
}

/// Resize every frame of a video.
pub fn resize_video(video: &Tensor<f32>, dst: [usize; 2]) -> Result<Tensor<f32>> {
    let [t, h, w, c] = dims(video)?;
    if [h, w] == dst {
        return Ok(video.clone());
    }
    let mut out = Vec::with_capacity(t * dst[0] * dst[1] * c);
    for frame in video.data().chunks_exact(h * w * c) {
        out.extend(resize_frame(frame, [h, w], c, dst)?);
    }
    Tensor::new(&[t, dst[0], dst[1], c], out)
}

/// Map 8-bit pixel values onto `[0, 1]`.
pub fn normalize(video: &Tensor<f32>) -> Result<Tensor<f32>> {
    if let Some(v) = video.data().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("pixel value {v} outside [0, 255]")));
    }
    let data = video.data().iter().map(|&v| v / 255.0).collect();
    Tensor::new(video.shape(), data)
}

/// Mirror every frame along the width axis.
pub fn hflip(video: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [t, h, w, c] = dims(video)?;
    let src = video.data();
    let mut out = vec![0.0; src.len()];
    for row in 0..t * h {
        let base = row * w * c;
        for x in 0..w {
            let from = base + x * c;
            let to = base + (w - 1 - x) * c;
            out[to..to + c].copy_from_slice(&src[from..from + c]);
        }
    }
    Tensor::new(&[t, h, w, c], out)
}
