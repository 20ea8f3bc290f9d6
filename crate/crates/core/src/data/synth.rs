//! Synthetic gait corpus.
//!
//! Each video shows a side-on quadruped: an elliptical body with a head and
//! four legs swinging in diagonal pairs, walking horizontally across a dark
//! background. A lame walker has one leg whose swing amplitude is scaled by
//! `1 - limp_ratio`, a body that dips in time with that leg, and a back
//! arched upwards, all proportional to `limp_ratio`. Pixel noise is additive
//! Gaussian. Every video is a pure function of `(seed, class, index)`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{preprocess, write_frame_dir, write_raw_tensor, DatasetManifest, Label, ManifestEntry, PipelineConfig, Split, VideoSample};
use crate::error::{Error, Result};
use crate::tensor::{derive_seed, Rng, Tensor};

const BACKGROUND: f64 = 40.0;
const BODY: f64 = 210.0;
const NEAR_LEG: f64 = 190.0;
const FAR_LEG: f64 = 150.0;
/// Leg swing amplitude in radians.
const SWING: f64 = 0.45;
/// Peak body dip as a fraction of frame height, at limp ratio 1.
const BOB: f64 = 0.12;
/// Back arch as a multiple of body half-height, at limp ratio 1.
const ARCH: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub normal: usize,
    pub lame: usize,
    /// Fraction of each class assigned to the test split.
    pub test_fraction: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub limp_ratio: f64,
    /// Gait cycles per video.
    pub gait_cycles: f64,
    /// Pixel noise standard deviation on the 0..255 scale.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            normal: 25,
            lame: 25,
            test_fraction: 0.4,
            frames: 25,
            height: 64,
            width: 64,
            limp_ratio: 0.5,
            gait_cycles: 2.0,
            noise_std: 8.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.normal + self.lame == 0 {
            return bad("synthetic corpus needs at least one video".into());
        }
        if !(0.0..1.0).contains(&self.limp_ratio) {
            return bad(format!("limp ratio {} outside [0, 1)", self.limp_ratio));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std {} must be >= 0", self.noise_std));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test fraction {} outside [0, 1)", self.test_fraction));
        }
        if self.frames == 0 || self.height < 16 || self.width < 16 {
            return bad(format!("need >= 1 frame and >= 16x16 pixels, got {}x{}x{}", self.frames, self.height, self.width));
        }
        if !(self.gait_cycles > 0.0 && self.gait_cycles.is_finite()) {
            return bad(format!("gait cycles {} must be > 0", self.gait_cycles));
        }
        Ok(())
    }

    fn test_count(&self, n: usize) -> usize {
        (n as f64 * self.test_fraction).round() as usize
    }
}

/// Rendered corpus kept in memory. `videos[i]` belongs to
/// `manifest.entries[i]` and holds `(T, H, W, 1)` values in `[0, 255]`.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub manifest: DatasetManifest,
    pub videos: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    Stvt,
    Png,
}

impl SynthCorpus {
    /// Preprocess the in-memory videos exactly as if loaded from disk.
    pub fn samples(&self, split: Split, pipeline: &PipelineConfig, seed: u64) -> Result<Vec<VideoSample>> {
        self.manifest
            .entries
            .iter()
            .zip(&self.videos)
            .filter(|(e, _)| e.split == split)
            .map(|(e, v)| {
                Ok(VideoSample {
                    id: e.id.clone(),
                    label: e.label,
                    split,
                    frames: preprocess(v, &e.id, pipeline, seed)?,
                    flipped: false,
                })
            })
            .collect()
    }

    /// Write sources under `dir/videos/` and `dir/manifest.jsonl`; returns
    /// the manifest path.
    pub fn write(&self, dir: &Path, format: SourceFormat) -> Result<PathBuf> {
        let videos = dir.join("videos");
        std::fs::create_dir_all(&videos).map_err(|e| Error::io(&videos, e))?;
        let mut manifest = self.manifest.clone();
        manifest.root = dir.to_path_buf();
        for (entry, video) in manifest.entries.iter_mut().zip(&self.videos) {
            entry.source = match format {
                SourceFormat::Stvt => PathBuf::from(format!("videos/{}.stvt", entry.id)),
                SourceFormat::Png => PathBuf::from(format!("videos/{}", entry.id)),
            };
            let path = dir.join(&entry.source);
            match format {
                SourceFormat::Stvt => write_raw_tensor(&path, video)?,
                SourceFormat::Png => write_frame_dir(&path, video)?,
            }
        }
        let path = dir.join("manifest.jsonl");
        manifest.write(&path)?;
        Ok(path)
    }
}

/// Render the corpus described by `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut entries = Vec::new();
    let mut videos = Vec::new();
    for (label, count) in [(Label::Normal, config.normal), (Label::Lame, config.lame)] {
        let train = count - config.test_count(count);
        for i in 0..count {
            let id = format!("{}_{i:03}", label.name());
            videos.push(render_video(config, label, i)?);
            let split = if i < train { Split::Train } else { Split::Test };
            entries.push(ManifestEntry { source: PathBuf::from(format!("videos/{id}.stvt")), id, label, split });
        }
    }
    Ok(SynthCorpus { config: config.clone(), manifest: DatasetManifest { root: PathBuf::new(), entries }, videos })
}

struct Walker {
    dir: f64,
    x0: f64,
    travel: f64,
    y0: f64,
    half_len: f64,
    half_height: f64,
    leg_len: f64,
    leg_width: f64,
    phase0: f64,
    cycles: f64,
    amplitudes: [f64; 4],
    lame_leg: usize,
    bob: f64,
    arch: f64,
}

/// Legs: front-near, front-far, back-near, back-far. Diagonal pairs share a
/// phase.
const LEG_PHASE: [f64; 4] = [0.0, PI, PI, 0.0];
const LEG_FRONT: [bool; 4] = [true, true, false, false];
const LEG_NEAR: [bool; 4] = [true, false, true, false];

impl Walker {
    fn sample(cfg: &SynthConfig, label: Label, rng: &mut Rng) -> Self {
        let (h, w) = (cfg.height as f64, cfg.width as f64);
        let dir = if rng.next_f64() < 0.5 { 1.0 } else { -1.0 };
        let start = w * rng.uniform(0.28, 0.36);
        let travel = w * rng.uniform(0.2, 0.28);
        let ratio = if label == Label::Lame { cfg.limp_ratio } else { 0.0 };
        let lame_leg = rng.below(4);
        let mut amplitudes = [SWING; 4];
        amplitudes[lame_leg] *= 1.0 - ratio;
        let half_height = h * rng.uniform(0.07, 0.085);
        Walker {
            dir,
            x0: if dir > 0.0 { start } else { w - start },
            travel,
            y0: h * rng.uniform(0.40, 0.45),
            half_len: w * rng.uniform(0.15, 0.18),
            half_height,
            leg_len: h * rng.uniform(0.17, 0.2),
            leg_width: (0.025 * w).max(1.0),
            phase0: rng.uniform(0.0, 2.0 * PI),
            cycles: cfg.gait_cycles * rng.uniform(0.85, 1.15),
            amplitudes,
            lame_leg,
            bob: ratio * BOB * h,
            arch: ratio * ARCH * half_height,
        }
    }

    /// Intensity of the figure at `(x, y)` in frame `t`, or `None` for
    /// background.
    fn shade(&self, geo: &Pose, x: f64, y: f64) -> Option<f64> {
        let u = (x - geo.cx) / self.half_len;
        if u.abs() <= 1.0 {
            let centre = geo.cy - self.arch * (1.0 - u * u);
            let v = (y - centre) / self.half_height;
            if u * u + v * v <= 1.0 {
                return Some(BODY);
            }
        }
        let (hx, hy) = (geo.cx + self.dir * 1.05 * self.half_len, geo.cy - 0.6 * self.half_height);
        let r = 0.55 * self.half_height;
        if (x - hx).powi(2) + (y - hy).powi(2) <= r * r {
            return Some(BODY);
        }
        let mut best = None;
        for (leg, &(ax, ay, bx, by)) in geo.legs.iter().enumerate() {
            if segment_distance(x, y, ax, ay, bx, by) <= self.leg_width {
                let v = if LEG_NEAR[leg] { NEAR_LEG } else { FAR_LEG };
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
        best
    }

    fn pose(&self, t: usize, frames: usize) -> Pose {
        let s = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
        let phase = self.phase0 + 2.0 * PI * self.cycles * t as f64 / frames as f64;
        let lame_phase = phase + LEG_PHASE[self.lame_leg];
        let cx = self.x0 + self.dir * self.travel * s;
        let cy = self.y0 + self.bob * (1.0 + lame_phase.sin()) / 2.0;
        let mut legs = [(0.0, 0.0, 0.0, 0.0); 4];
        for (leg, seg) in legs.iter_mut().enumerate() {
            let side = if LEG_FRONT[leg] { 0.65 } else { -0.65 };
            let hx = cx + self.dir * side * self.half_len;
            let hy = cy + 0.5 * self.half_height;
            let angle = self.amplitudes[leg] * (phase + LEG_PHASE[leg]).sin();
            *seg = (hx, hy, hx + self.dir * self.leg_len * angle.sin(), hy + self.leg_len * angle.cos());
        }
        Pose { cx, cy, legs }
    }
}

struct Pose {
    cx: f64,
    cy: f64,
    legs: [(f64, f64, f64, f64); 4],
}

fn segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ((px - ax - s * dx).powi(2) + (py - ay - s * dy).powi(2)).sqrt()
}

fn render_video(cfg: &SynthConfig, label: Label, index: usize) -> Result<Tensor<f32>> {
    let mut rng = Rng::new(derive_seed(cfg.seed, &[label.bit() as u64, index as u64]));
    let walker = Walker::sample(cfg, label, &mut rng);
    let (h, w, t) = (cfg.height, cfg.width, cfg.frames);
    let mut data = Vec::with_capacity(t * h * w);
    const SUB: [f64; 2] = [0.25, 0.75];
    for f in 0..t {
        let pose = walker.pose(f, t);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for sy in SUB {
                    for sx in SUB {
                        acc += walker.shade(&pose, x as f64 + sx, y as f64 + sy).unwrap_or(BACKGROUND);
                    }
                }
                let v = acc / 4.0 + cfg.noise_std * rng.normal();
                data.push(v.clamp(0.0, 255.0).round() as f32);
            }
        }
    }
    Tensor::new(&[t, h, w, 1], data)
}

/// Per-frame vertical centroid of figure pixels (brighter than halfway
/// between background and legs).
pub fn vertical_trace(video: &Tensor<f32>) -> Vec<f64> {
    let [t, h, w, c] = match *video.shape() {
        [t, h, w, c] => [t, h, w, c],
        _ => return Vec::new(),
    };
    let cut = ((BACKGROUND + FAR_LEG) / 2.0) as f32;
    (0..t)
        .map(|f| {
            let frame = &video.data()[f * h * w * c..(f + 1) * h * w * c];
            let (mut sum, mut n) = (0.0, 0.0);
            for (i, px) in frame.chunks_exact(c).enumerate() {
                let v = px.iter().sum::<f32>() / c as f32;
                if v > cut {
                    sum += (i / w) as f64;
                    n += 1.0;
                }
            }
            if n > 0.0 {
                sum / n
            } else {
                0.0
            }
        })
        .collect()
}

/// Variance of the vertical centroid over time.
pub fn bob_energy(video: &Tensor<f32>) -> f64 {
    let trace = vertical_trace(video);
    let n = trace.len() as f64;
    let mean = trace.iter().sum::<f64>() / n;
    trace.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n
}

/// Label a raw synthetic video by thresholding its bob energy at a quarter of
/// the energy a lame walker's dip produces.
pub fn bob_oracle(cfg: &SynthConfig, video: &Tensor<f32>) -> Label {
    let dip = cfg.limp_ratio * BOB * cfg.height as f64;
    let expected = dip * dip / 8.0;
    Label::from_bit((bob_energy(video) > expected / 4.0) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::hflip;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { normal: 6, lame: 6, frames: 16, height: 32, width: 32, seed, ..SynthConfig::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        let c = generate_synthetic(&small(4)).unwrap();
        assert!(a.videos.iter().zip(&b.videos).all(|(x, y)| x.bitwise_eq(y)));
        assert!(!a.videos[0].bitwise_eq(&c.videos[0]));
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn split_counts() {
        let corpus = generate_synthetic(&SynthConfig { frames: 2, height: 16, width: 16, ..SynthConfig::default() }).unwrap();
        let c = corpus.manifest.counts();
        assert_eq!((c.train_normal, c.train_lame, c.test_normal, c.test_lame), (15, 15, 10, 10));
        assert!(corpus.videos.iter().all(|v| v.shape() == [2, 16, 16, 1]));
        assert!(corpus.videos.iter().all(|v| v.data().iter().all(|&p| (0.0..=255.0).contains(&p) && p.fract() == 0.0)));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { limp_ratio: 1.0, ..small(0) },
            SynthConfig { noise_std: -1.0, ..small(0) },
            SynthConfig { normal: 0, lame: 0, ..small(0) },
            SynthConfig { height: 4, ..small(0) },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
        }
        let single = generate_synthetic(&SynthConfig { lame: 0, ..small(0) }).unwrap();
        assert!(single.manifest.entries.iter().all(|e| e.label == Label::Normal));
    }

    fn class_means(corpus: &SynthCorpus) -> [Vec<f64>; 2] {
        let n = corpus.videos[0].numel();
        let mut means = [vec![0.0; n], vec![0.0; n]];
        let mut counts = [0.0; 2];
        for (e, v) in corpus.manifest.entries.iter().zip(&corpus.videos) {
            let k = e.label.bit() as usize;
            counts[k] += 1.0;
            for (m, &p) in means[k].iter_mut().zip(v.data()) {
                *m += p as f64;
            }
        }
        for k in 0..2 {
            means[k].iter_mut().for_each(|m| *m /= counts[k]);
        }
        means
    }

    #[test]
    fn class_means_differ() {
        let [a, b] = class_means(&generate_synthetic(&small(5)).unwrap());
        let gap: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(gap > 100.0, "class-mean L2 gap {gap}");
    }

    #[test]
    fn zero_ratio_is_degenerate() {
        let cfg = SynthConfig { limp_ratio: 0.0, noise_std: 0.0, ..small(5) };
        let corpus = generate_synthetic(&cfg).unwrap();
        for v in &corpus.videos {
            assert!(bob_energy(v) < 0.5, "energy {}", bob_energy(v));
        }
    }

    #[test]
    fn bob_oracle_separates_classes() {
        let cfg = SynthConfig { normal: 20, lame: 20, seed: 11, ..small(0) };
        let corpus = generate_synthetic(&cfg).unwrap();
        let correct = corpus
            .manifest
            .entries
            .iter()
            .zip(&corpus.videos)
            .filter(|(e, v)| bob_oracle(&cfg, v) == e.label)
            .count();
        assert!(correct as f64 / 40.0 >= 0.95, "oracle accuracy {correct}/40");
    }

    fn horizontal_drift(video: &Tensor<f32>) -> f64 {
        let [t, h, w, _] = [video.shape()[0], video.shape()[1], video.shape()[2], video.shape()[3]];
        let centroid = |f: usize| {
            let frame = &video.data()[f * h * w..(f + 1) * h * w];
            let (mut s, mut n) = (0.0, 0.0);
            for (i, &v) in frame.iter().enumerate() {
                if v > 125.0 {
                    s += (i % w) as f64;
                    n += 1.0;
                }
            }
            s / n
        };
        centroid(t - 1) - centroid(0)
    }

    #[test]
    fn hflip_reverses_walking_direction() {
        let corpus = generate_synthetic(&small(2)).unwrap();
        for v in &corpus.videos {
            let d = horizontal_drift(v);
            let f = horizontal_drift(&hflip(v).unwrap());
            assert!(d.abs() > 2.0);
            assert!((d + f).abs() < 1e-9, "drift {d} vs flipped {f}");
        }
    }

    #[test]
    fn writes_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { normal: 1, lame: 1, frames: 3, height: 16, width: 16, ..SynthConfig::default() };
        let corpus = generate_synthetic(&cfg).unwrap();
        for (sub, fmt) in [("s", SourceFormat::Stvt), ("p", SourceFormat::Png)] {
            let path = corpus.write(&dir.path().join(sub), fmt).unwrap();
            let m = crate::data::load_manifest(&path).unwrap();
            for (e, v) in m.entries.iter().zip(&corpus.videos) {
                assert!(crate::data::load_video(&m.resolve(e), 1).unwrap().bitwise_eq(v));
            }
        }
    }
}
