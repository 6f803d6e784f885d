use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;

/// Standard deviation for dense and convolution weights (GPT-2 convention).
pub const WEIGHT_STD: f64 = 0.02;

/// Fan-in scaled standard deviation for layers followed by a ReLU.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in.max(1) as f64).sqrt()
}

/// Tensor of i.i.d. `N(0, std²)` samples.
pub fn normal<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        (z * std) as f32
    })
}

pub fn zeros(shape: impl Into<Vec<usize>>) -> Tensor<f32> {
    Tensor::zeros(shape)
}

pub fn ones(shape: impl Into<Vec<usize>>) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| 1.0)
}
