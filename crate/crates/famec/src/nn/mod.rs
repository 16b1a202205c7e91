//! Minimal dense/convolutional network machinery with explicit backprop.
//!
//! The networks in this workspace are small (three hidden layers, or a
//! handful of 3x3 convolutions), so layers are implemented directly over
//! `ndarray` with hand-derived gradients instead of pulling in an autodiff
//! framework. Everything is `f32`, single-threaded, and deterministic for a
//! fixed RNG; checkpoints serialize the same parameter tensors the
//! optimizers update.
//!
//! Conventions: batches are row-major `(batch, features)` matrices; images
//! are `(channels, height, width)`; a layer's `backward` consumes the
//! gradient at its output and returns the gradient at its input alongside
//! parameter gradients ordered exactly like `params_mut`.

mod adam;
mod conv;
mod dense;

pub use adam::Adam;
pub use conv::{Conv2d, Conv2dTrace};
pub use dense::{perturbed, Dense, DenseGrad, Mlp, MlpTrace};

use ndarray::{ArrayD, ArrayViewMutD};
use rand::Rng;

/// Elementwise nonlinearity applied between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(&self, x: f32) -> f32 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation output `y`.
    pub fn derivative_from_output(&self, y: f32) -> f32 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [ArrayD<f32>], max_norm: f32) -> f32 {
    let norm_sq: f32 = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f32>()).sum();
    let norm = norm_sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

/// Polyak averaging: `target <- tau * online + (1 - tau) * target`.
pub fn soft_update_views(mut target: Vec<ArrayViewMutD<'_, f32>>, online: &[ArrayD<f32>], tau: f32) {
    assert_eq!(target.len(), online.len(), "parameter lists must align");
    for (t, o) in target.iter_mut().zip(online) {
        assert_eq!(t.shape(), o.shape(), "parameter shapes must align");
        t.zip_mut_with(o, |tv, &ov| *tv = tau * ov + (1.0 - tau) * *tv);
    }
}

/// He-normal initialization for a weight matrix feeding a ReLU layer.
pub fn he_normal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> ndarray::Array2<f32> {
    let std = (2.0 / cols as f32).sqrt();
    ndarray::Array2::from_shape_fn((rows, cols), |_| standard_normal(rng) * std)
}

/// Xavier-uniform initialization for sigmoid/tanh layers.
pub fn xavier_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> ndarray::Array2<f32> {
    let limit = (6.0 / (rows + cols) as f32).sqrt();
    ndarray::Array2::from_shape_fn((rows, cols), |_| (rng.gen::<f32>() * 2.0 - 1.0) * limit)
}

/// Box-Muller standard normal; avoids a distribution dependency in the hot
/// initialization path and keeps draws identical across platforms.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f32 {
    loop {
        let u: f64 = rng.gen();
        let v: f64 = rng.gen();
        if u > f64::MIN_POSITIVE {
            let z = (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
            return z as f32;
        }
    }
}

/// Copy every parameter tensor out of a view list (for target-network
/// construction and checkpointing).
pub fn snapshot_params(params: &[ndarray::ArrayViewD<'_, f32>]) -> Vec<ArrayD<f32>> {
    params.iter().map(|p| p.to_owned()).collect()
}
