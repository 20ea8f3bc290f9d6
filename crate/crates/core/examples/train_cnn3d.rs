//! Train the scaled 3D CNN on a synthetic corpus and report video-level
//! accuracy under majority voting. Run with `--release`; it takes a minute
//! or two.

use stvc::data::{augment_train, generate_synthetic, PipelineConfig, Split, SynthConfig};
use stvc::eval::{evaluate, EvalReport, TieRule};
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
        conv_filters: vec![8, 16],
        dense_units: vec![32, 16],
        ..ModelConfig::cnn3d()
    };
    let pipeline = PipelineConfig::for_model(&cfg);
    let train = augment_train(&corpus.samples(Split::Train, &pipeline, seed)?)?;
    let test = corpus.samples(Split::Test, &pipeline, seed)?;

    let model = Model::<f32>::build(cfg.clone(), &mut Rng::derived(seed, &[0]))?;
    println!("{} parameters, {} training clips", model.param_count(), train.len());
    let mut trainer = Trainer::new(model, TrainConfig { seed, ..TrainConfig::default() })?;
    trainer.fit(&train, |s| println!("epoch {:>2}  loss {:.4}  accuracy {:.3}", s.epoch + 1, s.loss, s.accuracy))?;

    let verdicts = evaluate(&trainer.model, &test, 0.5, TieRule::Lame, 1)?;
    let report = EvalReport::new("cnn3d", &cfg.hash(), seed, 0.5, TieRule::Lame, verdicts)?;
    print!("{}", report.table());
    Ok(())
}
