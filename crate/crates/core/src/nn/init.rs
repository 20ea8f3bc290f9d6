use crate::error::Result;
use crate::tensor::{Fill, Rng, Scalar, Tensor};

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::create(shape, Fill::Uniform { low: -bound, high: bound }, rng)
}
