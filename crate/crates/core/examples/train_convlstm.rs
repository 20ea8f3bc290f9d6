//! Train the scaled ConvLSTM2D model (8 recurrent filters) and list the
//! per-video votes. Run with `--release`; expect several minutes.

use stvc::data::{augment_train, generate_synthetic, PipelineConfig, Split, SynthConfig};
use stvc::eval::{evaluate, TieRule};
use stvc::models::{Model, ModelConfig};
use stvc::train::{TrainConfig, Trainer};
use stvc::Rng;

fn main() -> stvc::Result<()> {
    let seed = 1;
    let corpus = generate_synthetic(&SynthConfig { frames: 16, seed, ..SynthConfig::default() })?;
    let cfg = ModelConfig {
        frames: 16,
        height: 64,
        width: 64,
        channels: 1,
        convlstm_filters: 8,
        dense_units: vec![32],
        ..ModelConfig::convlstm2d()
    };
    let pipeline = PipelineConfig::for_model(&cfg);
    let train = augment_train(&corpus.samples(Split::Train, &pipeline, seed)?)?;
    let test = corpus.samples(Split::Test, &pipeline, seed)?;

    let model = Model::<f32>::build(cfg, &mut Rng::derived(seed, &[0]))?;
    let mut trainer = Trainer::new(model, TrainConfig { seed, ..TrainConfig::default() })?;
    trainer.fit(&train, |s| println!("epoch {:>2}  loss {:.4}", s.epoch + 1, s.loss))?;

    let verdicts = evaluate(&trainer.model, &test, 0.5, TieRule::Lame, 1)?;
    let correct = verdicts.iter().filter(|v| v.label == v.predicted).count();
    for v in &verdicts {
        println!("{:<11} true {:<6} predicted {:<6} {:>2}/{} lame frames", v.id, v.label, v.predicted, v.lame_frames, v.frames);
    }
    println!("video accuracy {correct}/{}", verdicts.len());
    Ok(())
}
