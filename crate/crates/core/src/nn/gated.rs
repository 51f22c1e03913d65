use super::{Activation, Init, Module, NamedParam, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::tensor::{concat, conv3d, ConvGeometry, Scalar, Tensor};

/// Gated 3D convolution: `sigmoid(W_gate * I + b_gate) * f(W_feat * I + b_feat)`.
///
/// Both kernels share geometry and input channels, so they are evaluated as
/// one convolution with twice the output channels and split afterwards.
/// Setting `geometry.dilation > 1` gives the dilated-gated variant.
#[derive(Debug, Clone)]
pub struct GatedConvLayer<S: Scalar = f32> {
    pub gate_weight: Tensor<S>,
    pub gate_bias: Tensor<S>,
    pub feature_weight: Tensor<S>,
    pub feature_bias: Tensor<S>,
    pub geometry: ConvGeometry,
    pub activation: Activation,
}

impl<S: Scalar> GatedConvLayer<S> {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, k: usize, geometry: ConvGeometry) -> Self {
        GatedConvLayer {
            gate_weight: init.kaiming(&[c_out, c_in, k, k, k]),
            gate_bias: init.zeros(&[c_out]),
            feature_weight: init.kaiming(&[c_out, c_in, k, k, k]),
            feature_bias: init.zeros(&[c_out]),
            geometry,
            activation: Activation::LeakyRelu(LEAKY_SLOPE),
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn in_channels(&self) -> usize {
        self.gate_weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.gate_weight.shape()[0]
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        if self.gate_weight.shape() != self.feature_weight.shape() {
            return Err(Error::dim(
                "gated_conv",
                None,
                format!("gate kernel {:?} vs feature kernel {:?}", self.gate_weight.shape(), self.feature_weight.shape()),
            ));
        }
        let co = self.out_channels();
        let w = concat(&[&self.gate_weight, &self.feature_weight], 0)?;
        let b = concat(&[&self.gate_bias, &self.feature_bias], 0)?;
        let both = conv3d(input, &w, Some(&b), self.geometry)?;
        let axis = both.rank() - 4;
        let gate = both.narrow(axis, 0, co)?.sigmoid()?;
        let feature = self.activation.apply(&both.narrow(axis, co, co)?)?;
        gate.mul(&feature)
    }
}

impl<S: Scalar> Module<S> for GatedConvLayer<S> {
    fn params_mut(&mut self) -> Vec<NamedParam<'_, S>> {
        vec![
            NamedParam { name: "gate.weight".into(), tensor: &mut self.gate_weight },
            NamedParam { name: "gate.bias".into(), tensor: &mut self.gate_bias },
            NamedParam { name: "feature.weight".into(), tensor: &mut self.feature_weight },
            NamedParam { name: "feature.bias".into(), tensor: &mut self.feature_bias },
        ]
    }
}
