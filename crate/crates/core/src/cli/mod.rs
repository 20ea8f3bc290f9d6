//! Command-line front end.
//!
//! Settings resolve in three layers: built-in defaults, then the TOML file
//! given by `--config`, then flags. The resolved settings are written to
//! `run_config.json` in the output directory of every command that writes
//! files.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 runtime or numeric error.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{FileConfig, Precision, RunConfig};

use crate::data::{
    augment_train, generate_synthetic, load_manifest, load_sample, load_split, load_video, preprocess, IngestSummary,
    Label, PipelineConfig, SourceFormat, Split, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, majority_vote, predict_video, write_report, EvalReport, TieRule, VideoVerdict};
use crate::models::{Model, ModelConfig, Variant};
use crate::nn::check::{default_cases, run_cases, TOLERANCE};
use crate::tensor::{Rng, Scalar};
use crate::train::{check_classes, load_checkpoint, save_checkpoint, Checkpoint, EpochStats, Trainer};
use crate::data::VideoSample;

/// Stream for model initialization, derived from the master seed.
const MODEL_STREAM: u64 = 0x6d6f64656c;

#[derive(Debug, Parser)]
#[command(name = "stvc", version, args_override_self = true, about = "Train and evaluate spatiotemporal video classifiers for gait lameness")]
pub struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for initialization, sampling, shuffling and dropout.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "STVC_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic gait corpus with a manifest.
    Synth(SynthArgs),
    /// Validate a manifest and report frame counts after preprocessing.
    Ingest(IngestArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score the test split and write a report.
    Evaluate(EvalArgs),
    /// Classify one video.
    Predict(PredictArgs),
    /// Finite-difference gradient checks for every layer.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub normal: Option<usize>,
    #[arg(long)]
    pub lame: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame height and width.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub limp: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub cycles: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Write PNG frame directories instead of STVT tensors.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args, Default)]
pub struct ShapeArgs {
    /// Frames per clip.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame height and width after resizing.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Square intermediate resize applied before the final one; 0 disables it.
    #[arg(long)]
    pub intermediate: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub shape: ShapeArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// cnn3d or convlstm2d.
    #[arg(long)]
    pub model: Option<Variant>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from a checkpoint up to `--epochs`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub shape: ShapeArgs,
    /// cnn3d filters per conv block, e.g. `8,16`.
    #[arg(long, value_delimiter = ',')]
    pub conv_filters: Option<Vec<usize>>,
    /// convlstm2d hidden filters.
    #[arg(long)]
    pub lstm_filters: Option<usize>,
    /// Hidden dense widths, e.g. `32,16`.
    #[arg(long, value_delimiter = ',')]
    pub dense: Option<Vec<usize>>,
    /// Dropout rate per dense layer.
    #[arg(long, value_delimiter = ',')]
    pub dropout: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct VoteArgs {
    /// Frame probability at or above which a frame is lame.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// How an even frame count votes: reject (error) or lame (ties are lame).
    #[arg(long)]
    pub tie: Option<TieRule>,
    #[arg(long)]
    pub intermediate: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub vote: VoteArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// A `.stvt` video tensor or a directory of PNG frames.
    #[arg(long)]
    pub source: PathBuf,
    /// Video id used to seed frame sampling; defaults to the file stem.
    #[arg(long)]
    pub id: Option<String>,
    #[command(flatten)]
    pub vote: VoteArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check only this op.
    #[arg(long)]
    pub op: Option<String>,
}

impl std::str::FromStr for TieRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject" => Ok(TieRule::Reject),
            "lame" => Ok(TieRule::Lame),
            other => Err(Error::InvalidArgument(format!("unknown tie rule {other:?} (expected reject or lame)"))),
        }
    }
}

/// Parse `std::env::args`, run, and map the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    exit_code(run(cli))
}

pub fn exit_code(result: Result<()>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mut rc = RunConfig::base(&cli, &file);
    match cli.command {
        Command::Synth(a) => cmd_synth(&mut rc, &file, a),
        Command::Ingest(a) => cmd_ingest(&mut rc, &file, a),
        Command::Train(a) => match rc.precision {
            Precision::F32 => cmd_train::<f32>(&mut rc, &file, a),
            Precision::F64 => cmd_train::<f64>(&mut rc, &file, a),
        },
        Command::Evaluate(a) => match rc.precision {
            Precision::F32 => cmd_evaluate::<f32>(&mut rc, &file, a),
            Precision::F64 => cmd_evaluate::<f64>(&mut rc, &file, a),
        },
        Command::Predict(a) => match rc.precision {
            Precision::F32 => cmd_predict::<f32>(&mut rc, &file, a),
            Precision::F64 => cmd_predict::<f64>(&mut rc, &file, a),
        },
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required (flag or config file)")))
}

fn cmd_synth(rc: &mut RunConfig, file: &FileConfig, a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = config::overlay(&SynthConfig::default(), file.synth.as_ref())?;
    cfg.seed = rc.seed;
    if let Some(v) = a.normal {
        cfg.normal = v;
    }
    if let Some(v) = a.lame {
        cfg.lame = v;
    }
    if let Some(v) = a.frames {
        cfg.frames = v;
    }
    if let Some(v) = a.size {
        cfg.height = v;
        cfg.width = v;
    }
    if let Some(v) = a.limp {
        cfg.limp_ratio = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_std = v;
    }
    if let Some(v) = a.cycles {
        cfg.gait_cycles = v;
    }
    if let Some(v) = a.test_fraction {
        cfg.test_fraction = v;
    }
    let corpus = generate_synthetic(&cfg)?;
    create_dir(&rc.out)?;
    let format = if a.png { SourceFormat::Png } else { SourceFormat::Stvt };
    let manifest = corpus.write(&rc.out, format)?;
    rc.manifest = Some(manifest.clone());
    rc.synth = Some(cfg);
    rc.write(&rc.out)?;
    let c = corpus.manifest.counts();
    println!(
        "wrote {} videos ({} normal, {} lame; {} train, {} test) to {}",
        c.total(),
        c.train_normal + c.test_normal,
        c.train_lame + c.test_lame,
        c.train(),
        c.test(),
        manifest.display()
    );
    Ok(())
}

fn apply_shape(p: &mut PipelineConfig, s: &ShapeArgs) {
    if let Some(v) = s.frames {
        p.frames = v;
    }
    if let Some(v) = s.size {
        p.height = v;
        p.width = v;
    }
    if let Some(v) = s.channels {
        p.channels = v;
    }
    apply_intermediate(p, s.intermediate);
}

fn apply_intermediate(p: &mut PipelineConfig, v: Option<usize>) {
    match v {
        Some(0) => p.intermediate = None,
        Some(v) => p.intermediate = Some([v, v]),
        None => {}
    }
}

fn cmd_ingest(rc: &mut RunConfig, file: &FileConfig, a: IngestArgs) -> Result<()> {
    let path = required(a.manifest.or(file.manifest.clone()), "manifest")?;
    let manifest = load_manifest(&path)?;
    let mut pipeline: PipelineConfig = config::overlay(&PipelineConfig::default(), file.pipeline.as_ref())?;
    apply_shape(&mut pipeline, &a.shape);
    // One video at a time keeps memory flat at full resolution.
    let (mut train, mut augmented, mut test) = (0, 0, 0);
    let mut frames_per_video = 0;
    for entry in &manifest.entries {
        let s = load_sample(&manifest, entry, &pipeline, rc.seed)?;
        let t = s.frames.shape()[0];
        frames_per_video = t;
        match entry.split {
            Split::Train => {
                train += t;
                augmented += augment_train(std::slice::from_ref(&s))?.iter().map(|v| v.frames.shape()[0]).sum::<usize>();
            }
            Split::Test => test += t,
        }
    }
    let summary = IngestSummary {
        counts: manifest.counts(),
        frames_per_video,
        train_frames: train,
        augmented_train_frames: augmented,
        test_frames: test,
    };
    create_dir(&rc.out)?;
    write_json(&rc.out.join("ingest_summary.json"), &summary)?;
    rc.manifest = Some(path);
    rc.pipeline = Some(pipeline);
    rc.write(&rc.out)?;
    let c = &summary.counts;
    println!("videos: {} train ({} normal, {} lame), {} test ({} normal, {} lame)", c.train(), c.train_normal, c.train_lame, c.test(), c.test_normal, c.test_lame);
    println!(
        "frames: {} train, {} after augmentation, {} test",
        summary.train_frames, summary.augmented_train_frames, summary.test_frames
    );
    Ok(())
}

fn model_config(file: &FileConfig, a: &TrainArgs) -> Result<ModelConfig> {
    let file_variant = file
        .model
        .as_ref()
        .and_then(|t| t.get("variant"))
        .and_then(|v| v.as_str())
        .map(str::parse::<Variant>)
        .transpose()?;
    let variant = a.model.or(file_variant).unwrap_or(Variant::Cnn3d);
    let mut cfg: ModelConfig = config::overlay(&ModelConfig::default_for(variant), file.model.as_ref())?;
    cfg.variant = variant;
    if let Some(v) = a.shape.frames {
        cfg.frames = v;
    }
    if let Some(v) = a.shape.size {
        cfg.height = v;
        cfg.width = v;
    }
    if let Some(v) = a.shape.channels {
        cfg.channels = v;
    }
    if let Some(v) = &a.conv_filters {
        cfg.conv_filters = v.clone();
    }
    if let Some(v) = a.lstm_filters {
        cfg.convlstm_filters = v;
    }
    if let Some(v) = &a.dense {
        cfg.dense_units = v.clone();
        if a.dropout.is_none() && cfg.dropout_rates.len() != v.len() {
            let rate = cfg.dropout_rates.first().copied().unwrap_or(0.5);
            cfg.dropout_rates = vec![rate; v.len()];
        }
    }
    if let Some(v) = &a.dropout {
        cfg.dropout_rates = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pipeline_for(model: &ModelConfig, file: &FileConfig, intermediate: Option<usize>) -> Result<PipelineConfig> {
    let mut p: PipelineConfig = config::overlay(&PipelineConfig::for_model(model), file.pipeline.as_ref())?;
    apply_intermediate(&mut p, intermediate);
    let want = PipelineConfig { intermediate: p.intermediate, ..PipelineConfig::for_model(model) };
    if p != want {
        return Err(Error::ConfigMismatch("pipeline extents must match the model input".into()));
    }
    Ok(p)
}

fn history_table(history: &[EpochStats]) -> String {
    let mut s = format!("{:>6} {:>10} {:>9}\n", "epoch", "loss", "accuracy");
    for h in history {
        s += &format!("{:>6} {:>10.6} {:>9.4}\n", h.epoch + 1, h.loss, h.accuracy);
    }
    s
}

fn cmd_train<T: Scalar>(rc: &mut RunConfig, file: &FileConfig, a: TrainArgs) -> Result<()> {
    let manifest_path = required(a.manifest.clone().or(file.manifest.clone()), "manifest")?;
    let mut train_cfg = config::overlay(&crate::train::TrainConfig::default(), file.train.as_ref())?;
    train_cfg.seed = rc.seed;
    if let Some(v) = a.epochs {
        train_cfg.epochs = v;
    }
    if let Some(v) = a.batch {
        train_cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        train_cfg.learning_rate = v;
    }
    train_cfg.validate()?;

    let mut trainer: Trainer<T> = match &a.resume {
        Some(path) => {
            let mut t = load_checkpoint::<T>(path, None)?.trainer;
            if t.config.seed != train_cfg.seed {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint was trained with seed {}, run uses {}",
                    t.config.seed, train_cfg.seed
                )));
            }
            t.config.epochs = train_cfg.epochs;
            t
        }
        None => {
            let model_cfg = model_config(file, &a)?;
            let model = Model::build(model_cfg, &mut Rng::derived(rc.seed, &[MODEL_STREAM]))?;
            Trainer::new(model, train_cfg)?
        }
    };
    let model_cfg = trainer.model.config().clone();
    let pipeline = pipeline_for(&model_cfg, file, a.shape.intermediate)?;

    let manifest = load_manifest(&manifest_path)?;
    let samples = load_split(&manifest, Split::Train, &pipeline, rc.seed)?;
    check_classes(&samples)?;
    let samples = augment_train(&samples)?;
    eprintln!(
        "training {} ({} parameters) on {} clips for {} epochs",
        model_cfg.variant.name(),
        trainer.model.param_count(),
        samples.len(),
        trainer.config.epochs
    );
    let total = trainer.config.epochs;
    trainer.fit(&samples, |s| eprintln!("epoch {}/{total}  loss {:.6}  accuracy {:.4}", s.epoch + 1, s.loss, s.accuracy))?;

    create_dir(&rc.out)?;
    let ckpt = rc.out.join("checkpoint.stvc");
    save_checkpoint(&ckpt, &trainer)?;
    write_json(&rc.out.join("history.json"), &trainer.history)?;
    let table = rc.out.join("history.txt");
    std::fs::write(&table, history_table(&trainer.history)).map_err(|e| Error::io(&table, e))?;
    rc.manifest = Some(manifest_path);
    rc.checkpoint = Some(ckpt.clone());
    rc.resume = a.resume;
    rc.model = Some(model_cfg);
    rc.train = Some(trainer.config.clone());
    rc.pipeline = Some(pipeline);
    rc.write(&rc.out)?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

struct Loaded<T: Scalar> {
    ckpt: Checkpoint<T>,
    pipeline: PipelineConfig,
    threshold: f64,
    tie: TieRule,
}

fn load_for_scoring<T: Scalar>(rc: &mut RunConfig, file: &FileConfig, checkpoint: Option<PathBuf>, vote: &VoteArgs) -> Result<Loaded<T>> {
    let path = required(checkpoint.or(file.checkpoint.clone()), "checkpoint")?;
    let ckpt = load_checkpoint::<T>(&path, None)?;
    let model_cfg = ckpt.model().config().clone();
    if let Some(table) = &file.model {
        let want: ModelConfig = config::overlay(&model_cfg, Some(table))?;
        if want != model_cfg {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint {} holds a {} model that differs from the configured one",
                path.display(),
                model_cfg.variant.name()
            )));
        }
    }
    if !rc.seed_given {
        rc.seed = ckpt.trainer.config.seed;
    }
    let pipeline = pipeline_for(&model_cfg, file, vote.intermediate)?;
    let threshold = vote.threshold.or(file.eval.threshold).unwrap_or(crate::eval::DEFAULT_THRESHOLD);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let tie = vote.tie.or(file.eval.tie_rule).unwrap_or(TieRule::Reject);
    rc.checkpoint = Some(path);
    rc.model = Some(model_cfg);
    rc.pipeline = Some(pipeline.clone());
    rc.threshold = Some(threshold);
    rc.tie_rule = Some(tie);
    Ok(Loaded { ckpt, pipeline, threshold, tie })
}

fn cmd_evaluate<T: Scalar>(rc: &mut RunConfig, file: &FileConfig, a: EvalArgs) -> Result<()> {
    let l = load_for_scoring::<T>(rc, file, a.checkpoint, &a.vote)?;
    let manifest_path = required(a.manifest.or(file.manifest.clone()), "manifest")?;
    let manifest = load_manifest(&manifest_path)?;
    let test = load_split(&manifest, Split::Test, &l.pipeline, rc.seed)?;
    if test.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no test videos", manifest_path.display())));
    }
    let model = l.ckpt.model();
    let verdicts = evaluate(model, &test, l.threshold, l.tie, rc.jobs)?;
    let report = EvalReport::new(model.config().variant.name(), &model.config().hash(), rc.seed, l.threshold, l.tie, verdicts)?;
    create_dir(&rc.out)?;
    let path = rc.out.join("report.json");
    write_report(&report, &path)?;
    rc.manifest = Some(manifest_path);
    rc.write(&rc.out)?;
    print!("{}", report.table());
    println!("wrote {}", path.display());
    Ok(())
}

fn verdict_line(v: &VideoVerdict) -> String {
    let agreeing = if v.predicted == Label::Lame { v.lame_frames } else { v.frames - v.lame_frames };
    format!("{} ({agreeing}/{} frames)", v.predicted, v.frames)
}

fn cmd_predict<T: Scalar>(rc: &mut RunConfig, file: &FileConfig, a: PredictArgs) -> Result<()> {
    let l = load_for_scoring::<T>(rc, file, a.checkpoint, &a.vote)?;
    let id = match a.id {
        Some(id) => id,
        None => a
            .source
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("cannot derive an id from {}", a.source.display())))?
            .to_string(),
    };
    let raw = load_video(&a.source, l.pipeline.channels).map_err(|e| match e {
        e @ (Error::Io { .. } | Error::Image { .. }) => e,
        e => Error::InvalidInput(format!("{}: {e}", a.source.display())),
    })?;
    let frames = preprocess(&raw, &id, &l.pipeline, rc.seed)?;
    let sample = VideoSample { id: id.clone(), label: Label::Normal, split: Split::Test, frames, flipped: false };
    let fp = predict_video(l.ckpt.model(), &sample, l.threshold)?;
    let predicted = majority_vote(&fp.labels, l.tie)?;
    let lame_frames = fp.labels.iter().filter(|&&l| l == Label::Lame).count();
    let verdict = VideoVerdict {
        id,
        label: predicted,
        predicted,
        lame_frames,
        frames: fp.labels.len(),
        probabilities: fp.probabilities.clone(),
    };
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    writeln!(out, "{:>5} {:>11}  label", "frame", "probability").map_err(io)?;
    for (i, (p, label)) in fp.probabilities.iter().zip(&fp.labels).enumerate() {
        writeln!(out, "{i:>5} {p:>11.6}  {label}").map_err(io)?;
    }
    writeln!(out, "votes: {} lame, {} normal", lame_frames, verdict.frames - lame_frames).map_err(io)?;
    writeln!(out, "verdict: {}", verdict_line(&verdict)).map_err(io)?;
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let results = run_cases(default_cases(), a.op.as_deref())?;
    println!("{:<14} {:>14} {:>9} {:>6} {:>8}  result", "op", "max rel error", "checked", "ties", "seconds");
    for r in &results {
        println!(
            "{:<14} {:>14.3e} {:>9} {:>6} {:>8.2}  {}",
            r.name,
            r.max_rel_error,
            r.checked,
            r.ties_excluded,
            r.seconds,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!("relative error above {TOLERANCE:e} for {}", failed.join(", "))))
    }
}
