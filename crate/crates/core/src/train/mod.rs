//! Adam, the epoch loop, and checkpoints.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

use crate::data::{stack, Label, VideoSample};
use crate::error::{Error, Result};
use crate::models::{Mode, Model};
use crate::nn;
use crate::tensor::{Rng, Scalar, Tape, Tensor};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            epochs: 30,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be > 0", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} {b} outside (0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be > 0", self.epsilon));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape()).expect("parameter shape is valid")).collect();
        AdamState { m: zeros(), v: zeros(), t: 0 }
    }
}

/// One Adam update over every parameter, using each parameter's gradient
/// buffer.
pub fn adam_step<T: Scalar>(params: &mut [Tensor<T>], state: &mut AdamState<T>, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!("optimizer tracks {} parameters, model has {}", state.m.len(), params.len())));
    }
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::Contract(format!("parameter {i} has no gradient")));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (lr, eps) = (T::from_f64(cfg.learning_rate), T::from_f64(cfg.epsilon));
    let one = T::one();
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad().expect("checked above").to_vec();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *w = *w - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Model plus optimizer state, advanced one epoch at a time.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar = f32> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub config: TrainConfig,
    pub history: Vec<EpochStats>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params());
        Ok(Trainer { model, adam, config, history: Vec::new() })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    /// Visit order for an epoch; a pure function of the seed and epoch.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.config.shuffle {
            Rng::derived(self.config.seed, &[SHUFFLE_STREAM, epoch as u64]).shuffle(&mut order);
        }
        order
    }

    /// Run one epoch of mini-batch updates.
    pub fn run_epoch(&mut self, samples: &[VideoSample]) -> Result<EpochStats> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("no training samples".into()));
        }
        let epoch = self.epoch();
        let order = self.epoch_order(epoch, samples.len());
        let mut dropout_rng = Rng::derived(self.config.seed, &[DROPOUT_STREAM, epoch as u64]);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&VideoSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let x = stack(batch.iter().copied())?.cast::<T>();
            if !x.all_finite() {
                let ids: Vec<&str> = batch.iter().map(|s| s.id.as_str()).collect();
                return Err(Error::NonFinite(format!("input in epoch {epoch} batch {b} (samples {ids:?})")));
            }
            let labels: Vec<T> = batch.iter().map(|s| T::from_f64(s.label.bit() as f64)).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let (y, vars) = self.model.forward(&mut tape, xv, Mode::Train, &mut dropout_rng)?;
            let target = tape.constant(Tensor::new(&[batch.len(), 1], labels.clone())?);
            let loss_var = nn::bce_loss(&mut tape, y, target)?;
            let loss = tape.value(loss_var).item()?.as_f64();
            if !loss.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|s| s.id.as_str()).collect();
                return Err(Error::NonFinite(format!("loss {loss} in epoch {epoch} batch {b} (samples {ids:?})")));
            }
            correct += tape
                .value(y)
                .data()
                .iter()
                .zip(&labels)
                .filter(|(p, l)| (p.as_f64() >= 0.5) == (l.as_f64() == 1.0))
                .count();
            tape.backward(loss_var)?;
            self.model.accumulate_grads(&mut tape, &vars)?;
            adam_step(self.model.params_mut(), &mut self.adam, &self.config)?;
            self.model.zero_grads();
            loss_sum += loss * batch.len() as f64;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / samples.len() as f64,
            accuracy: correct as f64 / samples.len() as f64,
        };
        self.history.push(stats.clone());
        Ok(stats)
    }

    /// Train until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each one. Rejects single-class training sets.
    pub fn fit(&mut self, samples: &[VideoSample], mut on_epoch: impl FnMut(&EpochStats)) -> Result<&[EpochStats]> {
        check_classes(samples)?;
        while self.epoch() < self.config.epochs {
            let stats = self.run_epoch(samples)?;
            on_epoch(&stats);
        }
        Ok(&self.history)
    }
}

/// Training needs both classes present.
pub fn check_classes(samples: &[VideoSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let lame = samples.iter().filter(|s| s.label == Label::Lame).count();
    if lame == 0 || lame == samples.len() {
        let only = if lame == 0 { Label::Normal } else { Label::Lame };
        return Err(Error::InvalidInput(format!("training split contains only {only} videos")));
    }
    Ok(())
}
