//! Dataset ingestion: manifests, frame sampling, resizing, normalization,
//! augmentation and a synthetic gait corpus.
//!
//! The preprocessing chain for one video is
//! `load → sample_frames → pad_truncate → resize (→ intermediate → target) → normalize`.

mod frames;
mod manifest;
mod source;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use frames::{hflip, normalize, pad_truncate, resize_frame, resize_video, sample_frames, sample_indices, select_frames};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, Label, ManifestEntry, Split, SplitCounts};
pub use source::{load_video, read_frame_dir, read_raw_tensor, write_frame_dir, write_raw_tensor};
pub use synth::{bob_energy, bob_oracle, generate_synthetic, vertical_trace, SourceFormat, SynthConfig, SynthCorpus};

use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Optional resize applied before the final one.
    pub intermediate: Option<[usize; 2]>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { frames: 25, height: 224, width: 224, channels: 3, intermediate: Some([500, 500]) }
    }
}

impl PipelineConfig {
    /// Match a model's input extents, with no intermediate resize.
    pub fn for_model(model: &ModelConfig) -> Self {
        PipelineConfig {
            frames: model.frames,
            height: model.height,
            width: model.width,
            channels: model.channels,
            intermediate: None,
        }
    }
}

/// A preprocessed video: `(T, H, W, C)` frames in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub id: String,
    pub label: Label,
    pub split: Split,
    pub frames: Tensor<f32>,
    pub flipped: bool,
}

impl VideoSample {
    pub fn flipped_copy(&self) -> Result<Self> {
        Ok(VideoSample { frames: hflip(&self.frames)?, flipped: !self.flipped, ..self.clone() })
    }
}

/// Run the preprocessing chain on a raw `[0, 255]` video.
pub fn preprocess(raw: &Tensor<f32>, id: &str, cfg: &PipelineConfig, seed: u64) -> Result<Tensor<f32>> {
    let mut v = sample_frames(raw, cfg.frames, seed, id)?;
    v = pad_truncate(&v, cfg.frames)?;
    if let Some(mid) = cfg.intermediate {
        v = resize_video(&v, mid)?;
    }
    v = resize_video(&v, [cfg.height, cfg.width])?;
    normalize(&v)
}

/// Load and preprocess one manifest entry; errors name the record.
pub fn load_sample(manifest: &DatasetManifest, entry: &ManifestEntry, cfg: &PipelineConfig, seed: u64) -> Result<VideoSample> {
    let named = |e: Error| match e {
        Error::Manifest { .. } => e,
        other => Error::Manifest { record: format!("{:?}", entry.id), message: other.to_string() },
    };
    let raw = load_video(&manifest.resolve(entry), cfg.channels).map_err(named)?;
    let frames = preprocess(&raw, &entry.id, cfg, seed).map_err(named)?;
    Ok(VideoSample { id: entry.id.clone(), label: entry.label, split: entry.split, frames, flipped: false })
}

/// Load every sample of one split in manifest order.
pub fn load_split(manifest: &DatasetManifest, split: Split, cfg: &PipelineConfig, seed: u64) -> Result<Vec<VideoSample>> {
    manifest.split(split).map(|e| load_sample(manifest, e, cfg, seed)).collect()
}

/// Pair every training sample with its mirror image.
pub fn augment_train(samples: &[VideoSample]) -> Result<Vec<VideoSample>> {
    let mut out = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        if s.split != Split::Train {
            return Err(Error::Contract(format!("augmentation requested for test sample {:?}", s.id)));
        }
        let flipped = s.flipped_copy()?;
        out.push(s.clone());
        out.push(flipped);
    }
    Ok(out)
}

/// Flip each training sample in place with probability `p`.
pub fn augment_random(samples: &mut [VideoSample], p: f64, rng: &mut Rng) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("flip probability {p} outside [0, 1]")));
    }
    for s in samples.iter_mut() {
        if s.split != Split::Train {
            return Err(Error::Contract(format!("augmentation requested for test sample {:?}", s.id)));
        }
        if rng.next_f64() < p {
            *s = s.flipped_copy()?;
        }
    }
    Ok(())
}

/// Stack samples into an `(N, T, H, W, C)` batch.
pub fn stack<'a>(samples: impl IntoIterator<Item = &'a VideoSample>) -> Result<Tensor<f32>> {
    let mut shape = None;
    let mut data = Vec::new();
    let mut n = 0;
    for s in samples {
        if *shape.get_or_insert_with(|| s.frames.shape().to_vec()) != s.frames.shape() {
            return Err(Error::ShapeMismatch(format!("sample {:?} has shape {:?}", s.id, s.frames.shape())));
        }
        data.extend_from_slice(s.frames.data());
        n += 1;
    }
    let mut full = vec![n];
    full.extend(shape.ok_or_else(|| Error::InvalidArgument("cannot stack zero samples".into()))?);
    Tensor::new(&full, data)
}

/// Frame and video counts after ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub counts: SplitCounts,
    pub frames_per_video: usize,
    pub train_frames: usize,
    pub augmented_train_frames: usize,
    pub test_frames: usize,
}

impl IngestSummary {
    pub fn from_samples(counts: SplitCounts, train: &[VideoSample], augmented: &[VideoSample], test: &[VideoSample]) -> Self {
        let frames = |s: &[VideoSample]| s.iter().map(|v| v.frames.shape()[0]).sum();
        IngestSummary {
            counts,
            frames_per_video: train.first().or(test.first()).map_or(0, |v| v.frames.shape()[0]),
            train_frames: frames(train),
            augmented_train_frames: frames(augmented),
            test_frames: frames(test),
        }
    }
}
