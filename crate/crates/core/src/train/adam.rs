use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update at step `t >= 1`, in place.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<S: Scalar>(params: &mut [S], grads: &[S], m: &mut [S], v: &mut [S], lr: f64, cfg: &AdamConfig, t: u64) -> Result<()> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(Error::dim("adam_step", None, format!("params {n}, grads {}, moments {} / {}", grads.len(), m.len(), v.len())));
    }
    if t == 0 {
        return Err(Error::arg("adam_step", "step counter starts at 1"));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for i in 0..n {
        let g = grads[i].as_f64();
        let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
        let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
        m[i] = S::of(mi);
        v[i] = S::of(vi);
        let update = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
        params[i] = S::of(params[i].as_f64() - update);
    }
    Ok(())
}

/// Adam moments for every parameter of one model, in `params_mut` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S: Scalar = f32> {
    pub config: AdamConfig,
    pub lr: f64,
    pub t: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new<M: Module<S>>(config: AdamConfig, lr: f64, model: &mut M) -> Self {
        let sizes: Vec<usize> = model.params_mut().iter().map(|p| p.tensor.numel()).collect();
        Adam { config, lr, t: 0, m: sizes.iter().map(|&n| vec![S::zero(); n]).collect(), v: sizes.iter().map(|&n| vec![S::zero(); n]).collect() }
    }

    /// Applies the accumulated gradients and replaces every parameter with a
    /// fresh leaf holding the updated values. Missing gradients count as zero.
    pub fn step<M: Module<S>>(&mut self, model: &mut M) -> Result<()> {
        let params = model.params_mut();
        if params.len() != self.m.len() {
            return Err(Error::dim("adam", None, format!("{} parameters, {} moment buffers", params.len(), self.m.len())));
        }
        self.t += 1;
        for (k, p) in params.into_iter().enumerate() {
            let mut values = p.tensor.to_vec();
            let grads = p.tensor.grad_vec().unwrap_or_else(|| vec![S::zero(); values.len()]);
            adam_step(&mut values, &grads, &mut self.m[k], &mut self.v[k], self.lr, &self.config, self.t)
                .map_err(|e| Error::dim("adam", None, format!("parameter {}: {e}", p.name)))?;
            *p.tensor = Tensor::from_vec(values, p.tensor.shape())?.requires_grad();
        }
        Ok(())
    }
}
