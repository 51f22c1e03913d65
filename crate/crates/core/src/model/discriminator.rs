//! Conditional patch discriminator.
//!
//! Four blocks of convolution, leaky ReLU, and batch normalization (strides
//! 2, 2, 2, 1) followed by a `3 x 3 x 3` single-channel convolution and a
//! sigmoid. The result is a fully convolutional map of real/fake
//! probabilities, one per receptive-field patch: `8^3` for a `64^3` cube.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{prefixed, prefixed_buffers, BatchNormLayer, ConvLayer, Init, Module, NamedBuffer, NamedParam, LEAKY_SLOPE};
use crate::tensor::{concat, ConvGeometry, Scalar, Tensor};

const STRIDES: [usize; 4] = [2, 2, 2, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub side: usize,
    /// Output channels of the four blocks.
    pub widths: [usize; 4],
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { side: 64, widths: [64, 128, 256, 512] }
    }
}

impl DiscriminatorConfig {
    /// Edge length of the patch map.
    pub fn patch_extent(&self) -> usize {
        let g = ConvGeometry::new(2, 1, 1);
        let mut e = self.side;
        for &s in &STRIDES {
            e = ConvGeometry { stride: s, ..g }.out_extent(e, 3).unwrap_or(0);
        }
        e
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator<S: Scalar = f32> {
    pub config: DiscriminatorConfig,
    pub seed: u64,
    pub convs: Vec<ConvLayer<S>>,
    pub norms: Vec<BatchNormLayer<S>>,
    pub head: ConvLayer<S>,
}

impl<S: Scalar> Discriminator<S> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.patch_extent() == 0 || config.widths.contains(&0) {
            return Err(Error::arg("discriminator", format!("unusable geometry {config:?}")));
        }
        let mut init = Init::new(seed);
        let mut c_in = 3;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (&w, &s) in config.widths.iter().zip(&STRIDES) {
            convs.push(ConvLayer::new(&mut init, c_in, w, 3, ConvGeometry::new(s, 1, 1)));
            norms.push(BatchNormLayer::new(&mut init, w));
            c_in = w;
        }
        let head = ConvLayer::new(&mut init, c_in, 1, 3, ConvGeometry::same(3, 1));
        Ok(Discriminator { config, seed, convs, norms, head })
    }

    /// Probability map for `candidate` (`N x 1 x S^3`) given the
    /// generator's conditioning input (`N x 2 x S^3`: erased image and mask).
    pub fn forward(&mut self, condition: &Tensor<S>, candidate: &Tensor<S>, training: bool) -> Result<Tensor<S>> {
        let s = self.config.side;
        let batched = condition.rank() == 5;
        let (want_c, want_x) = if batched { (vec![condition.shape().first().copied().unwrap_or(0), 2, s, s, s], vec![condition.shape()[0], 1, s, s, s]) } else { (vec![2, s, s, s], vec![1, s, s, s]) };
        if condition.shape() != want_c.as_slice() {
            return Err(Error::dim("discriminator", None, format!("condition shape {:?}, expected {want_c:?}", condition.shape())));
        }
        if candidate.shape() != want_x.as_slice() {
            return Err(Error::dim("discriminator", None, format!("candidate shape {:?}, expected {want_x:?}", candidate.shape())));
        }
        let (c, x) = if batched {
            (condition.clone(), candidate.clone())
        } else {
            (condition.reshape(&[1, 2, s, s, s])?, candidate.reshape(&[1, 1, s, s, s])?)
        };
        let mut h = concat(&[&c, &x], 1)?;
        for (conv, norm) in self.convs.iter().zip(self.norms.iter_mut()) {
            h = norm.forward(&conv.forward(&h)?.leaky_relu(LEAKY_SLOPE)?, training)?;
        }
        let p = self.head.forward(&h)?.sigmoid()?;
        if batched {
            Ok(p)
        } else {
            p.reshape(&p.shape()[1..].to_vec())
        }
    }
}

impl<S: Scalar> Discriminator<S> {
    /// Scores real and generated candidates in one batch so that batch
    /// normalization sees both halves with shared statistics. Inputs are
    /// batched (`N x ...`); returns `(p_real, p_fake)`.
    pub fn forward_pair(&mut self, condition: &Tensor<S>, real: &Tensor<S>, fake: &Tensor<S>, training: bool) -> Result<(Tensor<S>, Tensor<S>)> {
        if condition.rank() != 5 {
            return Err(Error::dim("discriminator", None, format!("forward_pair needs batched inputs, got {:?}", condition.shape())));
        }
        let n = condition.shape()[0];
        let cond = concat(&[condition, condition], 0)?;
        let cand = concat(&[real, fake], 0)?;
        let p = self.forward(&cond, &cand, training)?;
        Ok((p.narrow(0, 0, n)?, p.narrow(0, n, n)?))
    }
}

impl<S: Scalar> Module<S> for Discriminator<S> {
    fn params_mut(&mut self) -> Vec<NamedParam<'_, S>> {
        let mut out = Vec::new();
        for (i, (conv, norm)) in self.convs.iter_mut().zip(self.norms.iter_mut()).enumerate() {
            out.extend(prefixed(&format!("block{}.conv", i + 1), conv.params_mut()));
            out.extend(prefixed(&format!("block{}.norm", i + 1), norm.params_mut()));
        }
        out.extend(prefixed("head", self.head.params_mut()));
        out
    }

    fn buffers_mut(&mut self) -> Vec<NamedBuffer<'_, S>> {
        let mut out = Vec::new();
        for (i, norm) in self.norms.iter_mut().enumerate() {
            out.extend(prefixed_buffers(&format!("block{}.norm", i + 1), norm.buffers_mut()));
        }
        out
    }
}
