use super::{Init, Module, NamedBuffer, NamedParam};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel batch normalization over `N x C x ...` inputs.
#[derive(Debug, Clone)]
pub struct BatchNormLayer<S: Scalar = f32> {
    pub scale: Tensor<S>,
    pub shift: Tensor<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub momentum: f64,
    pub eps: f64,
}

impl<S: Scalar> BatchNormLayer<S> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(init: &mut Init, channels: usize) -> Self {
        BatchNormLayer {
            scale: init.ones(&[channels]),
            shift: init.zeros(&[channels]),
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Training mode normalizes with batch statistics and updates the running
    /// estimates (unbiased variance); evaluation mode uses the running estimates.
    pub fn forward(&mut self, x: &Tensor<S>, training: bool) -> Result<Tensor<S>> {
        let c = self.channels();
        if x.rank() < 2 || x.shape()[1] != c {
            return Err(Error::dim("batch_norm", Some(1), format!("expected N x {c} x ..., got {:?}", x.shape())));
        }
        if training {
            let (y, mean, var) = normalize_batch(x, &self.scale, &self.shift, self.eps)?;
            let m = x.numel() / c;
            let mom = S::of(self.momentum);
            let unbias = if m > 1 { S::of(m as f64 / (m - 1) as f64) } else { S::one() };
            for ch in 0..c {
                self.running_mean[ch] = (S::one() - mom) * self.running_mean[ch] + mom * mean[ch];
                self.running_var[ch] = (S::one() - mom) * self.running_var[ch] + mom * var[ch] * unbias;
            }
            Ok(y)
        } else {
            let mut bshape = vec![1; x.rank()];
            bshape[1] = c;
            let eps = S::of(self.eps);
            let inv: Vec<S> = self.running_var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
            let mean = Tensor::from_vec(self.running_mean.clone(), &bshape)?;
            let inv = Tensor::from_vec(inv, &bshape)?;
            x.sub(&mean)?
                .mul(&inv)?
                .mul(&self.scale.reshape(&bshape)?)?
                .add(&self.shift.reshape(&bshape)?)
        }
    }
}

/// Batch-statistics normalization followed by the affine map; returns the
/// output with the per-channel mean and biased variance.
fn normalize_batch<S: Scalar>(x: &Tensor<S>, scale: &Tensor<S>, shift: &Tensor<S>, eps: f64) -> Result<(Tensor<S>, Vec<S>, Vec<S>)> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let inner: usize = x.shape()[2..].iter().product();
    let m = n * inner;
    let xd = x.data();
    let block = move |i: usize, ch: usize| (i * c + ch) * inner..(i * c + ch + 1) * inner;
    let inv_m = S::one() / S::of(m as f64);
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    for ch in 0..c {
        let s: S = (0..n).map(|i| xd[block(i, ch)].iter().copied().sum::<S>()).sum();
        mean[ch] = s * inv_m;
        let q: S = (0..n).map(|i| xd[block(i, ch)].iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<S>()).sum();
        var[ch] = q * inv_m;
    }
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + S::of(eps)).sqrt()).collect();
    let mut xhat = vec![S::zero(); xd.len()];
    let mut out = vec![S::zero(); xd.len()];
    let (sc, sh) = (scale.data(), shift.data());
    for i in 0..n {
        for ch in 0..c {
            for j in block(i, ch) {
                let h = (xd[j] - mean[ch]) * inv_std[ch];
                xhat[j] = h;
                out[j] = sc[ch] * h + sh[ch];
            }
        }
    }
    let (xt, st, bt) = (x.clone(), scale.clone(), shift.clone());
    let y = Tensor::from_op("batch_norm", x.shape().to_vec(), out, vec![x.clone(), scale.clone(), shift.clone()], move |g| {
        let sc = st.data();
        let mut gsum = vec![S::zero(); c];
        let mut gdot = vec![S::zero(); c];
        for i in 0..n {
            for ch in 0..c {
                for j in block(i, ch) {
                    gsum[ch] += g[j];
                    gdot[ch] += g[j] * xhat[j];
                }
            }
        }
        let gx = xt.tracks_grad().then(|| {
            let mut gx = vec![S::zero(); xhat.len()];
            for i in 0..n {
                for ch in 0..c {
                    let k = sc[ch] * inv_std[ch] * inv_m;
                    for j in block(i, ch) {
                        gx[j] = k * (S::of(m as f64) * g[j] - gsum[ch] - xhat[j] * gdot[ch]);
                    }
                }
            }
            gx
        });
        vec![gx, st.tracks_grad().then(|| gdot.clone()), bt.tracks_grad().then(|| gsum.clone())]
    })?;
    Ok((y, mean, var))
}

impl<S: Scalar> Module<S> for BatchNormLayer<S> {
    fn params_mut(&mut self) -> Vec<NamedParam<'_, S>> {
        vec![
            NamedParam { name: "scale".into(), tensor: &mut self.scale },
            NamedParam { name: "shift".into(), tensor: &mut self.shift },
        ]
    }

    fn buffers_mut(&mut self) -> Vec<NamedBuffer<'_, S>> {
        vec![
            NamedBuffer { name: "running_mean".into(), values: &mut self.running_mean },
            NamedBuffer { name: "running_var".into(), values: &mut self.running_var },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer(c: usize) -> BatchNormLayer<f64> {
        BatchNormLayer::new(&mut Init::new(0), c)
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::<f64>::full(&[2, 3, 2, 2, 2], 4.2);
        let y = layer(3).forward(&x, true).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn training_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, c, inner) = (3, 2, 64);
        let data: Vec<f64> = (0..n * c * inner).map(|_| rng.random_range(-3.0..5.0)).collect();
        let x = Tensor::from_vec(data.clone(), &[n, c, 4, 4, 4]).unwrap();
        let mut bn = layer(c);
        let y = bn.forward(&x, true).unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = (0..n).flat_map(|i| y.data()[(i * c + ch) * inner..(i * c + ch + 1) * inner].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);

            // Running statistics follow the explicit mean / unbiased variance.
            let raw: Vec<f64> = (0..n).flat_map(|i| data[(i * c + ch) * inner..(i * c + ch + 1) * inner].to_vec()).collect();
            let m = raw.iter().sum::<f64>() / raw.len() as f64;
            let v = raw.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (raw.len() - 1) as f64;
            assert!((bn.running_mean[ch] - 0.1 * m).abs() < 1e-12);
            assert!((bn.running_var[ch] - (0.9 + 0.1 * v)).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut bn = layer(1);
        bn.running_mean = vec![2.0];
        bn.running_var = vec![4.0 - 1e-5];
        let x = Tensor::<f64>::from_vec(vec![2.0, 4.0, 0.0, 6.0], &[1, 1, 4]).unwrap();
        let y = bn.forward(&x, false).unwrap();
        for (a, b) in y.data().iter().zip([0.0, 1.0, -1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
