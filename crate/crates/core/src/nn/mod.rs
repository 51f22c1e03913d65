//! Layers: plain and gated 3D convolution, batch normalization, and the
//! frozen 2D feature extractor used by the perceptual and style losses.

mod batchnorm;
mod conv;
mod features;
mod gated;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Scalar, Tensor};

pub use batchnorm::BatchNormLayer;
pub use conv::ConvLayer;
pub use features::{FeatureExtractor, EXTRACTOR_SEED};
pub use gated::GatedConvLayer;

/// Default negative slope of the leaky ReLU used as the gated feature activation.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Pointwise nonlinearity applied after a convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: &Tensor<S>) -> crate::Result<Tensor<S>> {
        match self {
            Activation::Identity => Ok(x.clone()),
            Activation::Relu => x.relu(),
            Activation::LeakyRelu(k) => x.leaky_relu(k),
            Activation::Sigmoid => x.sigmoid(),
        }
    }

    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(k) => {
                if x > 0.0 {
                    x
                } else {
                    k * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// A trainable tensor together with its dotted path inside a model.
pub struct NamedParam<'a, S: Scalar> {
    pub name: String,
    pub tensor: &'a mut Tensor<S>,
}

/// Non-trainable state that still belongs in a checkpoint.
pub struct NamedBuffer<'a, S: Scalar> {
    pub name: String,
    pub values: &'a mut Vec<S>,
}

/// Anything that owns trainable parameters.
pub trait Module<S: Scalar> {
    /// Parameters in a fixed order; names are stable across runs.
    fn params_mut(&mut self) -> Vec<NamedParam<'_, S>>;

    fn buffers_mut(&mut self) -> Vec<NamedBuffer<'_, S>> {
        Vec::new()
    }

    fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.tensor.numel()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.tensor.zero_grad();
        }
    }

    /// Snapshot of parameter values, in `params_mut` order.
    fn param_values(&mut self) -> Vec<Vec<S>> {
        self.params_mut().iter().map(|p| p.tensor.to_vec()).collect()
    }
}

pub(crate) fn prefixed<'a, S: Scalar>(prefix: &str, params: Vec<NamedParam<'a, S>>) -> impl Iterator<Item = NamedParam<'a, S>> + 'a {
    let prefix = prefix.to_string();
    params.into_iter().map(move |p| NamedParam {
        name: format!("{prefix}.{}", p.name),
        tensor: p.tensor,
    })
}

pub(crate) fn prefixed_buffers<'a, S: Scalar>(
    prefix: &str,
    buffers: Vec<NamedBuffer<'a, S>>,
) -> impl Iterator<Item = NamedBuffer<'a, S>> + 'a {
    let prefix = prefix.to_string();
    buffers.into_iter().map(move |b| NamedBuffer {
        name: format!("{prefix}.{}", b.name),
        values: b.values,
    })
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Zero-mean normal weights with variance `2 / fan_in`.
    pub fn kaiming<S: Scalar>(&mut self, shape: &[usize]) -> Tensor<S> {
        let fan_in: usize = shape[1..].iter().product();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| S::of(normal.sample(&mut self.rng))).collect();
        Tensor::from_vec(data, shape).expect("shape matches").requires_grad()
    }

    pub fn zeros<S: Scalar>(&mut self, shape: &[usize]) -> Tensor<S> {
        Tensor::zeros(shape).requires_grad()
    }

    pub fn ones<S: Scalar>(&mut self, shape: &[usize]) -> Tensor<S> {
        Tensor::full(shape, S::one()).requires_grad()
    }
}
