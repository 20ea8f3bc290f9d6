//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use stvc::data::{augment_train, generate_synthetic, hflip, load_split, load_manifest, IngestSummary, Label, PipelineConfig, SourceFormat, Split, SynthConfig, VideoSample};
use stvc::eval::{consistent_matrices, evaluate, majority_vote, metrics, Confusion, EvalReport, Reported, TieRule};
use stvc::models::{Model, ModelConfig};
use stvc::nn::check::{default_cases, run_cases};
use stvc::tensor::{stvt, Fill};
use stvc::train::{decode_checkpoint, encode_checkpoint, TrainConfig, Trainer};
use stvc::{Error, Rng, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

fn scaled_cnn3d() -> ModelConfig {
    ModelConfig {
        frames: 16,
        height: 64,
        width: 64,
        channels: 1,
        conv_filters: vec![8, 16],
        dense_units: vec![32, 16],
        ..ModelConfig::cnn3d()
    }
}

fn scaled_convlstm2d() -> ModelConfig {
    ModelConfig { frames: 16, height: 64, width: 64, channels: 1, convlstm_filters: 8, dense_units: vec![32], ..ModelConfig::convlstm2d() }
}

fn corpus_config(seed: u64) -> SynthConfig {
    SynthConfig { normal: 25, lame: 25, test_fraction: 0.4, frames: 16, height: 64, width: 64, limp_ratio: 0.5, seed, ..SynthConfig::default() }
}

fn gradient_soundness() -> Outcome {
    let start = Instant::now();
    let results = run_cases(default_cases(), None).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let names: Vec<&str> = results.iter().map(|r| r.name.as_str()).collect();
    let want = ["conv3d", "maxpool3d", "dense", "relu_sigmoid", "dropout", "convlstm2d", "bce_loss"];
    ensure(names == want, || format!("cases {names:?}"))?;
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    if let Some(r) = results.iter().find(|r| !r.passed()) {
        return Err(format!("{} max relative error {:.3e}", r.name, r.max_rel_error));
    }
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("7 ops, worst relative error {worst:.2e}, {secs:.1} s"))
}

/// Parameter count from layer arithmetic alone.
fn cnn3d_params_by_hand() -> (usize, usize) {
    let (t, h, w, c) = (25usize, 224usize, 224usize, 3usize);
    let k = 3 * 3 * 3;
    let conv1 = k * c * 32 + 32;
    let conv2 = k * 32 * 64 + 64;
    let flat = (t / 2 / 2) * (h / 2 / 2) * (w / 2 / 2) * 64;
    let dense1 = flat * 128 + 128;
    let dense2 = 128 * 64 + 64;
    let out = 64 + 1;
    (conv1 + conv2 + dense1 + dense2 + out, flat)
}

fn architecture_oracle() -> Outcome {
    let (expected, flat) = cnn3d_params_by_hand();
    ensure(expected == 154_207_105, || format!("hand count {expected}"))?;
    ensure(flat == 1_204_224, || format!("hand flatten {flat}"))?;
    let cfg = ModelConfig::cnn3d();
    let shapes = cfg.trace_shapes().map_err(err)?;
    let find = |name: &str| shapes.iter().find(|(n, _)| n == name).map(|(_, s)| s.clone());
    let checks: [(&str, Vec<usize>); 4] = [
        ("input", vec![25, 224, 224, 3]),
        ("pool1", vec![12, 112, 112, 32]),
        ("pool2", vec![6, 56, 56, 64]),
        ("flatten", vec![1_204_224]),
    ];
    for (name, want) in checks {
        let got = find(name).ok_or_else(|| format!("no {name} layer in trace"))?;
        let got = if got.len() == want.len() + 1 { got[1..].to_vec() } else { got };
        ensure(got == want, || format!("{name}: {got:?} != {want:?}"))?;
    }
    let model = Model::<f32>::build(cfg, &mut Rng::new(0)).map_err(err)?;
    let count = model.param_count();
    ensure(count == expected, || format!("model has {count} parameters, arithmetic gives {expected}"))?;
    Ok(format!("{count} parameters, shapes 25x224x224x3 -> 12x112x112x32 -> 6x56x56x64 -> 1204224"))
}

fn metrics_oracle() -> Outcome {
    let m = metrics(&Confusion { tp: 10, fp: 1, fn_: 1, tn: 8 });
    let got = [m.accuracy, m.precision, m.recall, m.f1];
    let row = [90.0, 90.9, 90.9, 90.91];
    for (g, r) in got.iter().zip(row) {
        let g = g.ok_or("undefined metric")?;
        ensure((g - r).abs() <= 0.05, || format!("{g:.4} vs reported {r}"))?;
    }
    let cnn = consistent_matrices(20, [Reported::new(90.0, 0), Reported::new(90.9, 1), Reported::new(90.9, 1), Reported::new(90.91, 2)]);
    ensure(cnn == [Confusion { tp: 10, fp: 1, fn_: 1, tn: 8 }], || format!("3D CNN row admits {cnn:?}"))?;
    let lstm = consistent_matrices(20, [Reported::new(85.0, 0), Reported::new(90.0, 0), Reported::new(81.82, 2), Reported::new(85.71, 2)]);
    ensure(lstm == [Confusion { tp: 9, fp: 1, fn_: 2, tn: 8 }], || format!("ConvLSTM row admits {lstm:?}"))?;
    Ok("90.00/90.91/90.91/90.91; n=20 inversion: 3D CNN row only tp10 fp1 fn1 tn8, ConvLSTM row only tp9 fp1 fn2 tn8".into())
}

fn pipeline_counts() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = SynthConfig { frames: 40, height: 32, width: 32, seed: 3, ..SynthConfig::default() };
    let path = generate_synthetic(&synth).map_err(err)?.write(dir.path(), SourceFormat::Stvt).map_err(err)?;
    let manifest = load_manifest(&path).map_err(err)?;
    let counts = manifest.counts();
    ensure(counts.total() == 50 && counts.train() == 30 && counts.test() == 20, || format!("{counts:?}"))?;
    let cfg = PipelineConfig { frames: 25, height: 32, width: 32, channels: 1, intermediate: None };
    let train = load_split(&manifest, Split::Train, &cfg, 3).map_err(err)?;
    let test = load_split(&manifest, Split::Test, &cfg, 3).map_err(err)?;
    let augmented = augment_train(&train).map_err(err)?;
    let s = IngestSummary::from_samples(counts, &train, &augmented, &test);
    ensure(s.frames_per_video == 25, || format!("{} frames per video", s.frames_per_video))?;
    ensure(
        (s.train_frames, s.augmented_train_frames, s.test_frames) == (750, 1500, 500),
        || format!("{} / {} / {}", s.train_frames, s.augmented_train_frames, s.test_frames),
    )?;
    Ok("750 train frames, 1500 after flipping, 500 test frames".into())
}

fn train_and_score(model_cfg: ModelConfig, corpus_seed: u64, epochs: usize) -> Result<(EvalReport, Trainer<f32>), String> {
    let corpus = generate_synthetic(&corpus_config(corpus_seed)).map_err(err)?;
    let pipeline = PipelineConfig::for_model(&model_cfg);
    let train = augment_train(&corpus.samples(Split::Train, &pipeline, corpus_seed).map_err(err)?).map_err(err)?;
    let test = corpus.samples(Split::Test, &pipeline, corpus_seed).map_err(err)?;
    let model = Model::build(model_cfg.clone(), &mut Rng::derived(corpus_seed, &[0])).map_err(err)?;
    let mut trainer = Trainer::new(model, TrainConfig { epochs, seed: corpus_seed, ..TrainConfig::default() }).map_err(err)?;
    trainer.fit(&train, |_| {}).map_err(err)?;
    let verdicts = evaluate(&trainer.model, &test, 0.5, TieRule::Lame, 1).map_err(err)?;
    let report = EvalReport::new(model_cfg.variant.name(), &model_cfg.hash(), corpus_seed, 0.5, TieRule::Lame, verdicts).map_err(err)?;
    Ok((report, trainer))
}

fn end_to_end() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (cfg, floor) in [(scaled_cnn3d(), 0.90), (scaled_convlstm2d(), 0.80)] {
        let name = cfg.variant.name();
        let start = Instant::now();
        let (report, _) = train_and_score(cfg, 1, 30)?;
        let secs = start.elapsed().as_secs_f64();
        let acc = report.accuracy_fraction();
        let pass = report.verdicts.len() == 20 && acc >= floor && secs < 900.0;
        ok &= pass;
        let mark = if pass { "" } else { " (below target or too slow)" };
        parts.push(format!("{name} {acc:.2} (target {floor:.2}) in {secs:.0} s{mark}"));
    }
    let summary = parts.join(", ");
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn overfit() -> Outcome {
    let synth = SynthConfig { normal: 2, lame: 2, test_fraction: 0.0, frames: 16, height: 64, width: 64, seed: 6, ..SynthConfig::default() };
    let corpus = generate_synthetic(&synth).map_err(err)?;
    let cfg = scaled_cnn3d();
    let samples = corpus.samples(Split::Train, &PipelineConfig::for_model(&cfg), 6).map_err(err)?;
    ensure(samples.len() == 4, || format!("{} videos", samples.len()))?;
    let model = Model::<f32>::build(cfg, &mut Rng::new(6)).map_err(err)?;
    let mut trainer = Trainer::new(model, TrainConfig { epochs: 200, seed: 6, ..TrainConfig::default() }).map_err(err)?;
    let mut last = f64::INFINITY;
    while trainer.epoch() < 200 {
        last = trainer.run_epoch(&samples).map_err(err)?.loss;
        if last < 0.05 {
            return Ok(format!("train loss {last:.4} after {} epochs", trainer.epoch()));
        }
    }
    Err(format!("train loss {last:.4} after 200 epochs"))
}

fn determinism() -> Outcome {
    let run = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let synth = SynthConfig { normal: 4, lame: 4, test_fraction: 0.5, ..corpus_config(9) };
        let corpus = generate_synthetic(&synth).map_err(err)?;
        let cfg = scaled_cnn3d();
        let pipeline = PipelineConfig::for_model(&cfg);
        let train = augment_train(&corpus.samples(Split::Train, &pipeline, 9).map_err(err)?).map_err(err)?;
        let test = corpus.samples(Split::Test, &pipeline, 9).map_err(err)?;
        let model = Model::<f32>::build(cfg.clone(), &mut Rng::derived(9, &[0])).map_err(err)?;
        let mut trainer = Trainer::new(model, TrainConfig { epochs: 2, seed: 9, ..TrainConfig::default() }).map_err(err)?;
        trainer.fit(&train, |_| {}).map_err(err)?;
        let verdicts = evaluate(&trainer.model, &test, 0.5, TieRule::Lame, 2).map_err(err)?;
        let report = EvalReport::new("cnn3d", &cfg.hash(), 9, 0.5, TieRule::Lame, verdicts).map_err(err)?;
        Ok((encode_checkpoint(&trainer), serde_json::to_vec(&report).map_err(|e| e.to_string())?))
    };
    let (c1, r1) = run()?;
    let (c2, r2) = run()?;
    ensure(c1 == c2, || "checkpoints differ".into())?;
    ensure(r1 == r2, || "reports differ".into())?;
    Ok(format!("checkpoints ({} bytes) and reports ({} bytes) identical", c1.len(), r1.len()))
}

fn vote_properties() -> Outcome {
    let mut rng = Rng::new(8);
    let label = |b: bool| if b { Label::Lame } else { Label::Normal };
    for _ in 0..5000 {
        let labels: Vec<Label> = (0..25).map(|_| label(rng.next_f64() < rng.next_f64())).collect();
        let lame = labels.iter().filter(|&&l| l == Label::Lame).count();
        let verdict = majority_vote(&labels, TieRule::Reject).map_err(err)?;
        ensure(verdict == label(lame >= 13), || format!("{lame}/25 lame voted {verdict}"))?;
        if let Some(i) = labels.iter().position(|&l| l == Label::Normal) {
            let mut raised = labels.clone();
            raised[i] = Label::Lame;
            let after = majority_vote(&raised, TieRule::Reject).map_err(err)?;
            ensure(!(verdict == Label::Lame && after == Label::Normal), || "vote not monotone".into())?;
        }
        let n = 2 * rng.below(13) + 1;
        let odd: Vec<Label> = labels[..n].to_vec();
        let lame_odd = odd.iter().filter(|&&l| l == Label::Lame).count();
        ensure(2 * lame_odd != n, || "odd count tied".into())?;
        majority_vote(&odd, TieRule::Reject).map_err(err)?;
    }
    for l in [Label::Normal, Label::Lame] {
        ensure(majority_vote(&[l; 25], TieRule::Reject).map_err(err)? == l, || "unanimity".into())?;
    }
    for i in 0..50 {
        let shape = [1 + rng.below(4), 1 + rng.below(9), 1 + rng.below(9), 1 + rng.below(3)];
        let frames = Tensor::<f32>::create(&shape, Fill::Uniform { low: 0.0, high: 1.0 }, &mut rng).map_err(err)?;
        let twice = hflip(&hflip(&frames).map_err(err)?).map_err(err)?;
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&twice) == bits(&frames), || format!("hflip twice changed sample {i}"))?;
        let s = VideoSample { id: format!("v{i}"), label: Label::Normal, split: Split::Train, frames, flipped: false };
        ensure(s.flipped_copy().map_err(err)?.flipped_copy().map_err(err)?.frames.data() == s.frames.data(), || "sample flip".into())?;
    }
    Ok("5000 random vote vectors, threshold 13/25, monotone, unanimous, no odd ties; hflip involution on 50 samples".into())
}

fn format_round_trips() -> Outcome {
    let mut rng = Rng::new(12);
    let a = Tensor::<f32>::create(&[2, 3, 4, 1], Fill::Normal { mean: 0.0, std: 1.0 }, &mut rng).map_err(err)?;
    let b = Tensor::<f64>::create(&[5, 7], Fill::Normal { mean: 0.0, std: 1.0 }, &mut rng).map_err(err)?;
    let bytes_a = stvt::encode(&a);
    let back_a: Tensor<f32> = stvt::decode(&bytes_a).map_err(err)?.into_exact().map_err(err)?;
    ensure(stvt::encode(&back_a) == bytes_a && back_a.shape() == a.shape(), || "f32 tensor round trip".into())?;
    let bytes_b = stvt::encode(&b);
    let back_b: Tensor<f64> = stvt::decode(&bytes_b).map_err(err)?.into_exact().map_err(err)?;
    ensure(stvt::encode(&back_b) == bytes_b, || "f64 tensor round trip".into())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("a.stvt");
    stvt::write_file(&path, &a).map_err(err)?;
    ensure(std::fs::read(&path).map_err(|e| e.to_string())? == bytes_a, || "file bytes".into())?;

    for (what, bad) in [
        ("truncated tensor", bytes_a[..bytes_a.len() - 1].to_vec()),
        ("bad magic", [b"XXXX".as_slice(), &bytes_a[4..]].concat()),
        ("trailing bytes", [bytes_a.as_slice(), &[0]].concat()),
    ] {
        ensure(matches!(stvt::decode(&bad), Err(Error::Format { .. })), || format!("{what} accepted"))?;
    }

    let cfg = ModelConfig { frames: 4, height: 16, width: 16, channels: 1, conv_filters: vec![2], dense_units: vec![4], dropout_rates: vec![0.5], ..ModelConfig::cnn3d() };
    let model = Model::<f32>::build(cfg, &mut Rng::new(1)).map_err(err)?;
    let trainer = Trainer::new(model, TrainConfig::default()).map_err(err)?;
    let ckpt = encode_checkpoint(&trainer);
    let back = decode_checkpoint::<f32>(&ckpt).map_err(err)?;
    ensure(encode_checkpoint(&back.trainer) == ckpt, || "checkpoint round trip".into())?;
    let mut flipped = ckpt.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 1;
    ensure(matches!(decode_checkpoint::<f32>(&flipped), Err(Error::Integrity(_))), || "corrupted payload accepted".into())?;
    ensure(matches!(decode_checkpoint::<f32>(&ckpt[..ckpt.len() - 3]), Err(Error::Format { .. } | Error::Integrity(_))), || "truncated checkpoint accepted".into())?;
    ensure(matches!(decode_checkpoint::<f32>(b"NOT-A-CKPT\n"), Err(Error::Format { .. })), || "bad magic accepted".into())?;
    Ok("f32/f64 tensors and checkpoints bitwise; truncation, bad magic, trailing bytes and flipped bytes rejected".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 gradient soundness", gradient_soundness),
        ("2 architecture oracle", architecture_oracle),
        ("3 metrics oracle", metrics_oracle),
        ("4 pipeline counts", pipeline_counts),
        ("5 end-to-end synthetic", end_to_end),
        ("6 overfit sanity", overfit),
        ("7 determinism", determinism),
        ("8 vote properties", vote_properties),
        ("9 format round-trips", format_round_trips),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
