//! Frame-level scoring, majority vote, confusion matrix and metrics.
//!
//! A frame is scored by tiling it along time into a static clip of the
//! model's length and reading the model's probability for that clip. A video
//! is labelled by majority vote over its frame labels, with lame as the
//! positive class.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Label, VideoSample};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Clips per forward pass when scoring frames.
const CLIP_BATCH: usize = 4;

/// Anything that maps `(N, T, H, W, C)` clips to `N` probabilities.
pub trait Scorer: Sync {
    fn frames(&self) -> usize;
    fn score(&self, clips: &Tensor<f32>) -> Result<Vec<f64>>;
}

impl<T: Scalar> Scorer for Model<T> {
    fn frames(&self) -> usize {
        self.config().frames
    }

    fn score(&self, clips: &Tensor<f32>) -> Result<Vec<f64>> {
        Ok(self.predict(&clips.cast::<T>())?.data().iter().map(|p| p.as_f64()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// Even label counts are a contract error.
    Reject,
    /// Even counts allowed; a tie resolves to lame.
    Lame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePredictions {
    pub id: String,
    pub probabilities: Vec<f64>,
    pub labels: Vec<Label>,
}

fn threshold_label(p: f64, threshold: f64) -> Label {
    Label::from_bit((p >= threshold) as u8)
}

/// Score every frame of `sample` independently.
pub fn predict_video(scorer: &impl Scorer, sample: &VideoSample, threshold: f64) -> Result<FramePredictions> {
    let shape = sample.frames.shape();
    let t = scorer.frames();
    if shape.len() != 4 || shape[0] != t {
        return Err(Error::InvalidInput(format!(
            "sample {:?} has shape {shape:?}, model expects {t} frames",
            sample.id
        )));
    }
    let frame_len: usize = shape[1..].iter().product();
    let data = sample.frames.data();
    let mut probabilities = Vec::with_capacity(t);
    let frames: Vec<usize> = (0..t).collect();
    for group in frames.chunks(CLIP_BATCH) {
        let mut clips = Vec::with_capacity(group.len() * t * frame_len);
        for &f in group {
            let frame = &data[f * frame_len..(f + 1) * frame_len];
            for _ in 0..t {
                clips.extend_from_slice(frame);
            }
        }
        let clip_shape = [group.len(), t, shape[1], shape[2], shape[3]];
        probabilities.extend(scorer.score(&Tensor::new(&clip_shape, clips)?)?);
    }
    if let Some(p) = probabilities.iter().find(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("frame probability {p} for {:?}", sample.id)));
    }
    let labels = probabilities.iter().map(|&p| threshold_label(p, threshold)).collect();
    Ok(FramePredictions { id: sample.id.clone(), probabilities, labels })
}

/// Video label from frame labels.
pub fn majority_vote(labels: &[Label], tie: TieRule) -> Result<Label> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("majority vote over zero labels".into()));
    }
    if tie == TieRule::Reject && labels.len() % 2 == 0 {
        return Err(Error::Contract(format!(
            "majority vote needs an odd label count, got {}",
            labels.len()
        )));
    }
    let lame = labels.iter().filter(|&&l| l == Label::Lame).count();
    Ok(Label::from_bit((2 * lame >= labels.len()) as u8))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(y_true: &[Label], y_pred: &[Label]) -> Result<Confusion> {
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = Confusion::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (Label::Lame, Label::Lame) => cm.tp += 1,
            (Label::Normal, Label::Lame) => cm.fp += 1,
            (Label::Lame, Label::Normal) => cm.fn_ += 1,
            (Label::Normal, Label::Normal) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Percentages; `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl Metrics {
    /// Names of the undefined metrics.
    pub fn undefined(&self) -> Vec<&'static str> {
        [("accuracy", self.accuracy), ("precision", self.precision), ("recall", self.recall), ("f1", self.f1)]
            .into_iter()
            .filter(|(_, v)| v.is_none())
            .map(|(n, _)| n)
            .collect()
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &Confusion) -> Metrics {
    let accuracy = ratio(cm.tp + cm.tn, cm.total());
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let pct = |v: Option<f64>| v.map(|v| v * 100.0);
    Metrics { accuracy: pct(accuracy), precision: pct(precision), recall: pct(recall), f1: pct(f1) }
}

/// A reported percentage and the number of decimals it was printed with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reported {
    pub value: f64,
    pub decimals: u32,
}

impl Reported {
    pub fn new(value: f64, decimals: u32) -> Self {
        Reported { value, decimals }
    }

    fn admits(&self, v: Option<f64>) -> bool {
        let half = 0.5 * 10f64.powi(-(self.decimals as i32));
        v.is_some_and(|v| (v - self.value).abs() <= half + 1e-9)
    }
}

/// Every confusion matrix over `n` videos whose accuracy, precision, recall
/// and F1 round to the reported values.
pub fn consistent_matrices(n: usize, reported: [Reported; 4]) -> Vec<Confusion> {
    let mut out = Vec::new();
    for tp in 0..=n {
        for fp in 0..=n - tp {
            for fn_ in 0..=n - tp - fp {
                let cm = Confusion { tp, fp, fn_, tn: n - tp - fp - fn_ };
                let m = metrics(&cm);
                let values = [m.accuracy, m.precision, m.recall, m.f1];
                if reported.iter().zip(values).all(|(r, v)| r.admits(v)) {
                    out.push(cm);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoVerdict {
    pub id: String,
    pub label: Label,
    pub predicted: Label,
    pub lame_frames: usize,
    pub frames: usize,
    pub probabilities: Vec<f64>,
}

/// Score and vote every sample. With `jobs > 1` samples are split into
/// contiguous chunks scored on scoped threads; output order is input order.
pub fn evaluate(
    scorer: &impl Scorer,
    samples: &[VideoSample],
    threshold: f64,
    tie: TieRule,
    jobs: usize,
) -> Result<Vec<VideoVerdict>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no test samples to evaluate".into()));
    }
    let verdict = |s: &VideoSample| -> Result<VideoVerdict> {
        let fp = predict_video(scorer, s, threshold)?;
        let predicted = majority_vote(&fp.labels, tie)?;
        Ok(VideoVerdict {
            id: s.id.clone(),
            label: s.label,
            predicted,
            lame_frames: fp.labels.iter().filter(|&&l| l == Label::Lame).count(),
            frames: fp.labels.len(),
            probabilities: fp.probabilities,
        })
    };
    let jobs = jobs.clamp(1, samples.len());
    if jobs == 1 {
        return samples.iter().map(verdict).collect();
    }
    let chunk = samples.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(verdict).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for h in handles {
            out.extend(h.join().expect("evaluation thread panicked")?);
        }
        Ok(out)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub config_hash: String,
    pub seed: u64,
    pub threshold: f64,
    pub tie_rule: TieRule,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub undefined_metrics: Vec<String>,
    pub verdicts: Vec<VideoVerdict>,
}

impl EvalReport {
    pub fn new(model: &str, config_hash: &str, seed: u64, threshold: f64, tie_rule: TieRule, verdicts: Vec<VideoVerdict>) -> Result<Self> {
        let truth: Vec<Label> = verdicts.iter().map(|v| v.label).collect();
        let pred: Vec<Label> = verdicts.iter().map(|v| v.predicted).collect();
        let cm = confusion(&truth, &pred)?;
        let m = metrics(&cm);
        Ok(EvalReport {
            model: model.into(),
            config_hash: config_hash.into(),
            seed,
            threshold,
            tie_rule,
            confusion: cm,
            metrics: m,
            undefined_metrics: m.undefined().into_iter().map(String::from).collect(),
            verdicts,
        })
    }

    pub fn accuracy_fraction(&self) -> f64 {
        self.metrics.accuracy.unwrap_or(0.0) / 100.0
    }

    /// Metrics row plus the confusion matrix as aligned text.
    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.2}"));
        let m = &self.metrics;
        let cm = &self.confusion;
        let mut s = String::new();
        writeln!(s, "{:<12} {:>9} {:>9} {:>9} {:>9}", "Model", "Accuracy", "Precision", "Recall", "F1-score").unwrap();
        writeln!(
            s,
            "{:<12} {:>9} {:>9} {:>9} {:>9}",
            self.model,
            cell(m.accuracy),
            cell(m.precision),
            cell(m.recall),
            cell(m.f1)
        )
        .unwrap();
        writeln!(s).unwrap();
        writeln!(s, "{:<12} {:>12} {:>12}", "", "pred normal", "pred lame").unwrap();
        writeln!(s, "{:<12} {:>12} {:>12}", "true normal", cm.tn, cm.fp).unwrap();
        writeln!(s, "{:<12} {:>12} {:>12}", "true lame", cm.fn_, cm.tp).unwrap();
        if !self.undefined_metrics.is_empty() {
            writeln!(s, "\nundefined: {}", self.undefined_metrics.join(", ")).unwrap();
        }
        s
    }
}

/// Write `path` as JSON and the text table next to it with a `.txt`
/// extension. Returns the table path.
pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let table = path.with_extension("txt");
    std::fs::write(&table, report.table()).map_err(|e| Error::io(&table, e))?;
    Ok(table)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}
