//! Train briefly, save a checkpoint, reload it, and confirm that resuming
//! matches an uninterrupted run bit for bit. A corrupted copy is rejected.

use stvc::data::{augment_train, generate_synthetic, PipelineConfig, Split, SynthConfig};
use stvc::models::{Model, ModelConfig};
use stvc::train::{encode_checkpoint, load_checkpoint, save_checkpoint, TrainConfig, Trainer};
use stvc::Rng;

fn main() -> stvc::Result<()> {
    let corpus = generate_synthetic(&SynthConfig { normal: 3, lame: 3, frames: 8, height: 32, width: 32, seed: 2, ..SynthConfig::default() })?;
    let cfg = ModelConfig { frames: 8, height: 32, width: 32, channels: 1, conv_filters: vec![4], dense_units: vec![8], ..ModelConfig::cnn3d() };
    let samples = augment_train(&corpus.samples(Split::Train, &PipelineConfig::for_model(&cfg), 2)?)?;
    let fresh = || -> stvc::Result<Trainer<f32>> {
        let model = Model::build(cfg.clone(), &mut Rng::new(2))?;
        Trainer::new(model, TrainConfig { epochs: 4, seed: 2, ..TrainConfig::default() })
    };

    let mut straight = fresh()?;
    straight.fit(&samples, |_| {})?;

    let dir = std::env::temp_dir().join("stvc-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| stvc::Error::InvalidInput(e.to_string()))?;
    let path = dir.join("half.stvc");
    let mut first = fresh()?;
    first.config.epochs = 2;
    first.fit(&samples, |_| {})?;
    save_checkpoint(&path, &first)?;

    let mut resumed = load_checkpoint::<f32>(&path, Some(&cfg))?.trainer;
    println!("reloaded at epoch {}", resumed.epoch());
    resumed.config.epochs = 4;
    resumed.fit(&samples, |_| {})?;
    let same = encode_checkpoint(&resumed) == encode_checkpoint(&straight);
    println!("resumed run identical to uninterrupted run: {same}");

    let mut bytes = std::fs::read(&path).map_err(|e| stvc::Error::InvalidInput(e.to_string()))?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = dir.join("corrupt.stvc");
    std::fs::write(&bad, bytes).map_err(|e| stvc::Error::InvalidInput(e.to_string()))?;
    match load_checkpoint::<f32>(&bad, None) {
        Ok(_) => println!("corrupted checkpoint loaded (unexpected)"),
        Err(e) => println!("corrupted checkpoint rejected: {e}"),
    }
    Ok(())
}
