//! The two video classifiers and their forward pass.
//!
//! * `cnn3d`: `[conv3d(3³, same) → relu → maxpool(2,2,2)]×k → flatten →
//!   [dense → relu → dropout]×m → dense(1) → sigmoid`
//! * `convlstm2d`: `convlstm2d(3², same, sequences) → maxpool(1,2,2) →
//!   maxpool(1,2,2) → flatten → [dense → relu → dropout]×m → dense(1) → sigmoid`
//!
//! Every extent is configurable so that reduced variants train on a desktop;
//! the defaults reproduce the full-size architectures.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{self, pooled_extents, Padding, GATES};
use crate::tensor::{Rng, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cnn3d,
    Convlstm2d,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Cnn3d => "cnn3d",
            Variant::Convlstm2d => "convlstm2d",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn3d" => Ok(Variant::Cnn3d),
            "convlstm2d" => Ok(Variant::Convlstm2d),
            other => Err(Error::InvalidConfig(format!(
                "unknown model variant {other:?} (expected cnn3d or convlstm2d)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// cnn3d: filters of each conv block.
    pub conv_filters: Vec<usize>,
    pub conv_kernel: [usize; 3],
    /// convlstm2d: hidden filters.
    pub convlstm_filters: usize,
    pub convlstm_kernel: [usize; 2],
    pub dense_units: Vec<usize>,
    /// One per dense layer.
    pub dropout_rates: Vec<f64>,
}

impl ModelConfig {
    pub fn cnn3d() -> Self {
        ModelConfig {
            variant: Variant::Cnn3d,
            frames: 25,
            height: 224,
            width: 224,
            channels: 3,
            conv_filters: vec![32, 64],
            conv_kernel: [3, 3, 3],
            convlstm_filters: 32,
            convlstm_kernel: [3, 3],
            dense_units: vec![128, 64],
            dropout_rates: vec![0.5, 0.5],
        }
    }

    pub fn convlstm2d() -> Self {
        ModelConfig {
            variant: Variant::Convlstm2d,
            dense_units: vec![128],
            dropout_rates: vec![0.25],
            ..Self::cnn3d()
        }
    }

    pub fn default_for(variant: Variant) -> Self {
        match variant {
            Variant::Cnn3d => Self::cnn3d(),
            Variant::Convlstm2d => Self::convlstm2d(),
        }
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 5] {
        [batch, self.frames, self.height, self.width, self.channels]
    }

    pub fn validate(&self) -> Result<()> {
        plan(self).map(|_| ())
    }

    /// Activation shapes after each layer for a batch of one.
    pub fn trace_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        Ok(plan(self)?.trace)
    }

    /// Short stable hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Conv3d { weight: usize, bias: usize },
    ConvLstm { first: usize },
    Relu,
    MaxPool([usize; 3]),
    Flatten,
    Dense { weight: usize, bias: usize },
    Dropout(f64),
    Sigmoid,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Constant(f64),
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

struct Plan {
    layers: Vec<Layer>,
    params: Vec<ParamSpec>,
    trace: Vec<(String, Vec<usize>)>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn plan(cfg: &ModelConfig) -> Result<Plan> {
    if cfg.frames == 0 || cfg.height == 0 || cfg.width == 0 || cfg.channels == 0 {
        return Err(invalid("frames, height, width and channels must be >= 1"));
    }
    if cfg.dense_units.iter().any(|&u| u == 0) {
        return Err(invalid("dense units must be >= 1"));
    }
    if cfg.dropout_rates.len() != cfg.dense_units.len() {
        return Err(invalid(format!(
            "{} dropout rates for {} dense layers",
            cfg.dropout_rates.len(),
            cfg.dense_units.len()
        )));
    }
    if let Some(r) = cfg.dropout_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(invalid(format!("dropout rate {r} outside [0, 1)")));
    }

    let mut p = Plan { layers: Vec::new(), params: Vec::new(), trace: Vec::new() };
    let add_param = |params: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>, init: Init| {
        params.push(ParamSpec { name, shape, init });
        params.len() - 1
    };
    let mut shape = vec![cfg.frames, cfg.height, cfg.width, cfg.channels];
    p.trace.push(("input".into(), shape.clone()));

    match cfg.variant {
        Variant::Cnn3d => {
            if cfg.conv_filters.is_empty() || cfg.conv_filters.iter().any(|&f| f == 0) {
                return Err(invalid("cnn3d needs at least one conv layer with >= 1 filters"));
            }
            if cfg.conv_kernel.iter().any(|&k| k == 0) {
                return Err(invalid("conv kernel extents must be >= 1"));
            }
            let field: usize = cfg.conv_kernel.iter().product();
            for (i, &filters) in cfg.conv_filters.iter().enumerate() {
                let cin = shape[3];
                let [kt, kh, kw] = cfg.conv_kernel;
                let weight = add_param(
                    &mut p.params,
                    format!("conv{}.weight", i + 1),
                    vec![kt, kh, kw, cin, filters],
                    Init::Glorot { fan_in: field * cin, fan_out: field * filters },
                );
                let bias = add_param(&mut p.params, format!("conv{}.bias", i + 1), vec![filters], Init::Constant(0.0));
                p.layers.push(Layer::Conv3d { weight, bias });
                p.layers.push(Layer::Relu);
                shape[3] = filters;
                p.trace.push((format!("conv{}", i + 1), shape.clone()));
                let pool = [2, 2, 2];
                let out = pooled_extents([shape[0], shape[1], shape[2]], pool)
                    .map_err(|e| invalid(format!("pool after conv{}: {e}", i + 1)))?;
                shape[..3].copy_from_slice(&out);
                p.layers.push(Layer::MaxPool(pool));
                p.trace.push((format!("pool{}", i + 1), shape.clone()));
            }
        }
        Variant::Convlstm2d => {
            let f = cfg.convlstm_filters;
            let [kh, kw] = cfg.convlstm_kernel;
            if f == 0 || kh == 0 || kw == 0 {
                return Err(invalid("convlstm filters and kernel extents must be >= 1"));
            }
            let cin = shape[3];
            let first = p.params.len();
            for g in GATES {
                add_param(
                    &mut p.params,
                    format!("convlstm.w_x{g}"),
                    vec![kh, kw, cin, f],
                    Init::Glorot { fan_in: kh * kw * cin, fan_out: kh * kw * f },
                );
            }
            for g in GATES {
                add_param(
                    &mut p.params,
                    format!("convlstm.w_h{g}"),
                    vec![kh, kw, f, f],
                    Init::Glorot { fan_in: kh * kw * f, fan_out: kh * kw * f },
                );
            }
            for g in GATES {
                let init = Init::Constant(if g == "f" { 1.0 } else { 0.0 });
                add_param(&mut p.params, format!("convlstm.b_{g}"), vec![f], init);
            }
            p.layers.push(Layer::ConvLstm { first });
            shape[3] = f;
            p.trace.push(("convlstm".into(), shape.clone()));
            for i in 0..2 {
                let pool = [1, 2, 2];
                let out = pooled_extents([shape[0], shape[1], shape[2]], pool)
                    .map_err(|e| invalid(format!("pool{}: {e}", i + 1)))?;
                shape[..3].copy_from_slice(&out);
                p.layers.push(Layer::MaxPool(pool));
                p.trace.push((format!("pool{}", i + 1), shape.clone()));
            }
        }
    }

    let mut width: usize = shape.iter().product();
    p.layers.push(Layer::Flatten);
    p.trace.push(("flatten".into(), vec![width]));
    for (i, (&units, &rate)) in cfg.dense_units.iter().zip(&cfg.dropout_rates).enumerate() {
        let weight = add_param(
            &mut p.params,
            format!("dense{}.weight", i + 1),
            vec![width, units],
            Init::Glorot { fan_in: width, fan_out: units },
        );
        let bias = add_param(&mut p.params, format!("dense{}.bias", i + 1), vec![units], Init::Constant(0.0));
        p.layers.extend([Layer::Dense { weight, bias }, Layer::Relu, Layer::Dropout(rate)]);
        width = units;
        p.trace.push((format!("dense{}", i + 1), vec![width]));
    }
    let weight = add_param(
        &mut p.params,
        "out.weight".into(),
        vec![width, 1],
        Init::Glorot { fan_in: width, fan_out: 1 },
    );
    let bias = add_param(&mut p.params, "out.bias".into(), vec![1], Init::Constant(0.0));
    p.layers.extend([Layer::Dense { weight, bias }, Layer::Sigmoid]);
    p.trace.push(("out".into(), vec![1]));
    Ok(p)
}

/// An instantiated network: configuration plus named parameters in a fixed
/// order.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    layers: Vec<Layer>,
}

impl<T: Scalar> Model<T> {
    /// Build either variant, initializing weights from `rng`.
    pub fn build(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let plan = plan(&config)?;
        let mut params = Vec::with_capacity(plan.params.len());
        for spec in &plan.params {
            let t = match spec.init {
                Init::Glorot { fan_in, fan_out } => nn::glorot_uniform(&spec.shape, fan_in, fan_out, rng)?,
                Init::Constant(c) => Tensor::full(&spec.shape, c)?,
            };
            params.push(t.with_requires_grad());
        }
        Ok(Model {
            config,
            names: plan.params.into_iter().map(|s| s.name).collect(),
            params,
            layers: plan.layers,
        })
    }

    /// Rebuild from stored parameters; names and shapes must match `config`.
    pub fn from_params(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let plan = plan(&config)?;
        if named.len() != plan.params.len() {
            return Err(Error::ConfigMismatch(format!(
                "{} parameters supplied, {} config expects {}",
                named.len(),
                config.variant.name(),
                plan.params.len()
            )));
        }
        let mut params = Vec::with_capacity(named.len());
        for (spec, (name, t)) in plan.params.iter().zip(named) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
            params.push(t.with_requires_grad());
        }
        Ok(Model {
            config,
            names: plan.params.into_iter().map(|s| s.name).collect(),
            params,
            layers: plan.layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 5 || shape[1..] != [c.frames, c.height, c.width, c.channels] || shape[0] == 0 {
            return Err(Error::InvalidInput(format!(
                "batch shape {shape:?} does not match model input (N, {}, {}, {}, {})",
                c.frames, c.height, c.width, c.channels
            )));
        }
        Ok(())
    }

    /// Record the network on `tape`. Parameters are bound as gradient leaves
    /// in training mode and as constants otherwise; their vars are returned
    /// in parameter order. Dropout draws from `rng` only in training mode.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode, rng: &mut Rng) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape.shape(x))?;
        let training = mode == Mode::Train;
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| if training { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        let mut h = x;
        for layer in &self.layers {
            h = match *layer {
                Layer::Conv3d { weight, bias } => nn::conv3d(tape, h, vars[weight], vars[bias], Padding::Same)?,
                Layer::ConvLstm { first } => {
                    let p: [Var; 12] = vars[first..first + 12].try_into().unwrap();
                    nn::convlstm2d(tape, h, &p)?
                }
                Layer::Relu => tape.relu(h),
                Layer::MaxPool(pool) => nn::maxpool3d(tape, h, pool)?,
                Layer::Flatten => nn::flatten(tape, h)?,
                Layer::Dense { weight, bias } => nn::dense(tape, h, vars[weight], vars[bias])?,
                Layer::Dropout(rate) => nn::dropout(tape, h, rate, training, rng)?,
                Layer::Sigmoid => tape.sigmoid(h),
            };
        }
        Ok((h, vars))
    }

    /// Forward a batch and return the `(N, 1)` probabilities.
    pub fn forward_batch(&self, batch: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let (y, _) = self.forward(&mut tape, x, mode, rng)?;
        Ok(tape.value(y).clone())
    }

    /// Inference-mode probabilities; deterministic.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_batch(batch, Mode::Infer, &mut Rng::new(0))
    }

    /// Move gradients of the parameter leaves `vars` from `tape` into the
    /// parameters' gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &mut Tape<T>, vars: &[Var]) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = tape.take_grad(v) {
                p.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }
}
