use super::{Init, Module, NamedParam};
use crate::error::Result;
use crate::tensor::{conv3d, ConvGeometry, Scalar, Tensor};

/// Plain 3D convolution with bias.
#[derive(Debug, Clone)]
pub struct ConvLayer<S: Scalar = f32> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub geometry: ConvGeometry,
}

impl<S: Scalar> ConvLayer<S> {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, k: usize, geometry: ConvGeometry) -> Self {
        ConvLayer {
            weight: init.kaiming(&[c_out, c_in, k, k, k]),
            bias: init.zeros(&[c_out]),
            geometry,
        }
    }

    /// `1 x 1 x 1` projection.
    pub fn pointwise(init: &mut Init, c_in: usize, c_out: usize) -> Self {
        Self::new(init, c_in, c_out, 1, ConvGeometry::new(1, 0, 1))
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        conv3d(x, &self.weight, Some(&self.bias), self.geometry)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<S: Scalar> Module<S> for ConvLayer<S> {
    fn params_mut(&mut self) -> Vec<NamedParam<'_, S>> {
        vec![
            NamedParam { name: "weight".into(), tensor: &mut self.weight },
            NamedParam { name: "bias".into(), tensor: &mut self.bias },
        ]
    }
}
