//! Frame scoring and majority voting with a hand-written scorer, showing how
//! frame probabilities become a video verdict and then metrics.

use stvc::data::{Label, Split, VideoSample};
use stvc::eval::{evaluate, EvalReport, Scorer, TieRule};
use stvc::Tensor;

/// Scores a clip by its mean brightness.
struct Brightness;

impl Scorer for Brightness {
    fn frames(&self) -> usize {
        5
    }

    fn score(&self, batch: &Tensor<f32>) -> stvc::Result<Vec<f64>> {
        let per_clip = batch.numel() / batch.shape()[0];
        Ok(batch.data().chunks(per_clip).map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / per_clip as f64).collect())
    }
}

fn video(id: &str, label: Label, levels: [f32; 5]) -> VideoSample {
    let data = levels.iter().flat_map(|&l| [l; 4]).collect();
    VideoSample { id: id.into(), label, split: Split::Test, frames: Tensor::new(&[5, 2, 2, 1], data).unwrap(), flipped: false }
}

fn main() -> stvc::Result<()> {
    let samples = [
        video("calm", Label::Normal, [0.1, 0.2, 0.1, 0.3, 0.2]),
        video("borderline", Label::Normal, [0.6, 0.7, 0.2, 0.1, 0.55]),
        video("limping", Label::Lame, [0.9, 0.8, 0.4, 0.7, 0.6]),
        video("subtle", Label::Lame, [0.4, 0.6, 0.3, 0.45, 0.2]),
    ];
    let verdicts = evaluate(&Brightness, &samples, 0.5, TieRule::Reject, 2)?;
    for v in &verdicts {
        let probs: Vec<String> = v.probabilities.iter().map(|p| format!("{p:.2}")).collect();
        println!("{:<10} [{}] -> {}/{} lame -> {}", v.id, probs.join(" "), v.lame_frames, v.frames, v.predicted);
    }
    let report = EvalReport::new("brightness", "-", 0, 0.5, TieRule::Reject, verdicts)?;
    print!("\n{}", report.table());
    Ok(())
}
