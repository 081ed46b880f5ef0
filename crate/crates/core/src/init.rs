//! Weight initialization. Kaiming-uniform with fan-in scaling for conv and
//! linear weights (the standard choice for ReLU networks); biases start at
//! zero. All draws go through a caller-supplied seeded rng so that model
//! construction is a pure function of the seed.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Kaiming-uniform sample bound: sqrt(6 / fan_in), i.e. gain sqrt(2) for
/// ReLU under uniform sampling.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

/// Trainable weight tensor with Kaiming-uniform fan-in initialization.
pub fn kaiming_uniform<T: Scalar>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let shape = shape.into();
    let bound = kaiming_bound(fan_in);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::param(shape, data).expect("shape/data constructed together")
}

/// Zero-initialized trainable tensor (biases, norm shifts).
pub fn zeros_param<T: Scalar>(shape: impl Into<Vec<usize>>) -> Tensor<T> {
    let shape = shape.into();
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![T::zero(); n]).expect("shape/data constructed together")
}

/// One-initialized trainable tensor (norm scales).
pub fn ones_param<T: Scalar>(shape: impl Into<Vec<usize>>) -> Tensor<T> {
    let shape = shape.into();
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![T::one(); n]).expect("shape/data constructed together")
}

/// Small-magnitude uniform parameter, used for token and positional
/// embeddings.
pub fn uniform_param<T: Scalar>(
    shape: impl Into<Vec<usize>>,
    bound: f64,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let shape = shape.into();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::param(shape, data).expect("shape/data constructed together")
}
