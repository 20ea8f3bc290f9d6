use crate::error::{Error, Result};
use crate::tensor::{Backward, Rng, Scalar, Tape, Tensor, Var};

use super::init::glorot_uniform;

/// Fully connected layer: weights `(in, out)`, bias `(out)`.
#[derive(Debug, Clone)]
pub struct DenseParams<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.ndim() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::ShapeMismatch(format!(
                "dense weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(DenseParams { weight, bias })
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let weight = glorot_uniform(&[inputs, outputs], inputs, outputs, rng)?;
        Self::new(weight, Tensor::zeros(&[outputs])?)
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// `x · W + b` for `x` of shape `(N, in)`.
pub fn dense<T: Scalar>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xs = tape.shape(x);
    let ws = tape.shape(weight);
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(Error::ShapeMismatch(format!("dense input {xs:?} with weight {ws:?}")));
    }
    let y = tape.matmul(x, weight)?;
    tape.add(y, bias)
}

/// `(N, ...) → (N, product of the rest)`; data order is unchanged.
pub fn flatten<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x);
    let n = s[0];
    let rest = s[1..].iter().product::<usize>().max(1);
    tape.reshape(x, &[n, rest])
}

pub fn relu<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    tape.relu(x)
}

pub fn sigmoid<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    tape.sigmoid(x)
}

struct MaskBackward<T> {
    mask: Vec<T>,
}

impl<T: Scalar> Backward<T> for MaskBackward<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.iter().zip(&self.mask).map(|(&a, &m)| a * m).collect())])
    }
}

/// Inverted dropout. In training mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; otherwise `x` is returned
/// unchanged.
pub fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let xv = tape.value(x);
    let mask: Vec<T> = (0..xv.numel())
        .map(|_| if rng.next_f64() < rate { T::zero() } else { keep })
        .collect();
    let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
    let value = Tensor::from_parts(xv.shape().to_vec(), data);
    Ok(tape.record(&[x], value, MaskBackward { mask }))
}

/// Probability clamp applied before taking logs.
pub const BCE_EPSILON: f64 = 1e-7;

struct BceBackward;

impl<T: Scalar> Backward<T> for BceBackward {
    fn name(&self) -> &'static str {
        "bce_loss"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        let p = inputs[0].data();
        let y = inputs[1].data();
        let n = p.len() as f64;
        let scale = g[0].as_f64() / n;
        // The derivative is taken at the clamped probability (no zeroing in the
        // clamped region) so saturated predictions still receive a signal.
        let dp = needs[0].then(|| {
            p.iter()
                .zip(y)
                .map(|(&pi, &yi)| {
                    let pc = pi.as_f64().clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
                    let yi = yi.as_f64();
                    T::from_f64(scale * ((1.0 - yi) / (1.0 - pc) - yi / pc))
                })
                .collect()
        });
        Ok(vec![dp, None])
    }
}

/// Mean binary cross-entropy between probabilities and `{0,1}` targets.
pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::ShapeMismatch(format!(
            "bce prediction {:?} vs target {:?}",
            tape.shape(pred),
            tape.shape(target)
        )));
    }
    let p = tape.value(pred).data();
    let y = tape.value(target).data();
    if let Some(bad) = y.iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::InvalidArgument(format!("bce target {bad} is not 0 or 1")));
    }
    let mut total = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        let pc = pi.as_f64().clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        let yi = yi.as_f64();
        total -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
    }
    let loss = Tensor::scalar(T::from_f64(total / p.len() as f64));
    Ok(tape.record(&[pred, target], loss, BceBackward))
}
