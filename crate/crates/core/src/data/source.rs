//! Reading and writing video sources: STVT tensors and PNG frame directories.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{stvt, Tensor};

/// Read a raw tensor file in any stored precision.
pub fn read_raw_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    Ok(stvt::read_file(path)?.into_tensor())
}

pub fn write_raw_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    stvt::write_file(path, t)
}

/// Load a video with `channels` channels and pixel values in `[0, 255]`.
pub fn load_video(path: &Path, channels: usize) -> Result<Tensor<f32>> {
    let video = if path.is_dir() { read_frame_dir(path, channels)? } else { read_raw_tensor(path)? };
    match video.shape() {
        [_, _, _, c] if *c == channels => Ok(video),
        s => Err(Error::InvalidInput(format!(
            "{}: expected (T, H, W, {channels}) video, got {s:?}",
            path.display()
        ))),
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Decode a directory of PNG frames in lexicographic file-name order.
pub fn read_frame_dir(dir: &Path, channels: usize) -> Result<Tensor<f32>> {
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidConfig(format!("image frames support 1 or 3 channels, not {channels}")));
    }
    let files = png_files(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no PNG frames", dir.display())));
    }
    let mut size = None;
    let mut data = Vec::new();
    for file in &files {
        let img = image::open(file).map_err(|e| Error::Image { path: file.clone(), message: e.to_string() })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if *size.get_or_insert((h, w)) != (h, w) {
            return Err(Error::InvalidInput(format!(
                "{}: frame is {h}x{w}, earlier frames are {}x{}",
                file.display(),
                size.unwrap().0,
                size.unwrap().1
            )));
        }
        let pixels = if channels == 1 { img.to_luma8().into_raw() } else { img.to_rgb8().into_raw() };
        data.extend(pixels.into_iter().map(f32::from));
    }
    let (h, w) = size.unwrap();
    Tensor::new(&[files.len(), h, w, channels], data)
}

/// Write a `(T, H, W, 1|3)` video with values in `[0, 255]` as
/// `frame_00000.png`, `frame_00001.png`, ...
pub fn write_frame_dir(dir: &Path, video: &Tensor<f32>) -> Result<()> {
    let [t, h, w, c] = match *video.shape() {
        [t, h, w, c] if c == 1 || c == 3 => [t, h, w, c],
        ref s => return Err(Error::InvalidInput(format!("cannot write {s:?} as PNG frames"))),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let frame = h * w * c;
    for i in 0..t {
        let bytes: Vec<u8> = video.data()[i * frame..(i + 1) * frame]
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        let path = dir.join(format!("frame_{i:05}.png"));
        let color = if c == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
        image::save_buffer(&path, &bytes, w as u32, h as u32, color)
            .map_err(|e| Error::Image { path: path.clone(), message: e.to_string() })?;
    }
    Ok(())
}
