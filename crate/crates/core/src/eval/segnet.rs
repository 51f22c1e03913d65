use serde::{Deserialize, Serialize};

use crate::data::{Batch, MaskVolume, TumorCube, Volume};
use crate::error::{Error, Result};
use crate::nn::{prefixed, ConvLayer, Init, Module, NamedParam};
use crate::tensor::{concat, no_grad, ConvGeometry, Scalar, Tensor};
use crate::train::{epoch_order, Adam, AdamConfig};

/// Three-level encoder-decoder for binary tumor segmentation.
#[derive(Debug, Clone)]
pub struct TinySegNet<S: Scalar = f32> {
    pub widths: [usize; 3],
    enc: [ConvLayer<S>; 3],
    bottom: ConvLayer<S>,
    dec: [ConvLayer<S>; 2],
    head: ConvLayer<S>,
}

impl<S: Scalar> TinySegNet<S> {
    pub fn new(widths: [usize; 3], seed: u64) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::arg("segnet", format!("widths {widths:?} contain a zero")));
        }
        let [a, b, c] = widths;
        let mut init = Init::new(seed);
        let same = ConvGeometry::same(3, 1);
        let down = ConvGeometry::new(2, 1, 1);
        Ok(TinySegNet {
            widths,
            enc: [ConvLayer::new(&mut init, 1, a, 3, same), ConvLayer::new(&mut init, a, b, 3, down), ConvLayer::new(&mut init, b, c, 3, down)],
            bottom: ConvLayer::new(&mut init, c, c, 3, same),
            dec: [ConvLayer::new(&mut init, c + b, b, 3, same), ConvLayer::new(&mut init, b + a, a, 3, same)],
            head: ConvLayer::pointwise(&mut init, a, 1),
        })
    }

    /// Per-voxel logits, same extents as the `[N, 1, S, S, S]` input.
    pub fn logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let s = x.shape();
        if s.len() != 5 || s[1] != 1 || s[2..].iter().any(|&d| d % 4 != 0 || d == 0) {
            return Err(Error::dim("segnet", None, format!("expected [N, 1, X, Y, Z] with extents divisible by 4, got {s:?}")));
        }
        let e1 = self.enc[0].forward(x)?.relu()?;
        let e2 = self.enc[1].forward(&e1)?.relu()?;
        let e3 = self.enc[2].forward(&e2)?.relu()?;
        let b = self.bottom.forward(&e3)?.relu()?;
        let d2 = self.dec[0].forward(&concat(&[&b.upsample_trilinear(2)?, &e2], 1)?)?.relu()?;
        let d1 = self.dec[1].forward(&concat(&[&d2.upsample_trilinear(2)?, &e1], 1)?)?.relu()?;
        self.head.forward(&d1)
    }

    pub fn probabilities(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.logits(x)?.sigmoid()
    }

    /// Thresholded prediction for one cube image.
    pub fn predict(&self, image: &Volume, threshold: f64) -> Result<MaskVolume> {
        let _g = no_grad();
        let [x, y, z] = image.dims;
        let p = self.probabilities(&image.to_tensor::<S>().reshape(&[1, 1, x, y, z])?)?;
        let data = p.data().iter().map(|v| u8::from(v.as_f64() > threshold)).collect();
        MaskVolume::new(image.dims, data)
    }
}

impl<S: Scalar> Module<S> for TinySegNet<S> {
    fn params_mut(&mut self) -> Vec<NamedParam<'_, S>> {
        let mut out = Vec::new();
        for (i, l) in self.enc.iter_mut().enumerate() {
            out.extend(prefixed(&format!("enc{}", i + 1), l.params_mut()));
        }
        out.extend(prefixed("bottom", self.bottom.params_mut()));
        for (i, l) in self.dec.iter_mut().enumerate() {
            out.extend(prefixed(&format!("dec{}", 2 - i), l.params_mut()));
        }
        out.extend(prefixed("head", self.head.params_mut()));
        out
    }
}

/// `mean(softplus(z) - t z)` plus soft Dice `1 - (2 sum(p t) + 1) / (sum p + sum t + 1)`.
pub fn segmentation_loss<S: Scalar>(logits: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>> {
    let softplus = logits.relu()?.add(&logits.abs()?.neg()?.exp()?.add_scalar(1.0)?.ln()?)?;
    let bce = softplus.sub(&target.mul(logits)?)?.mean()?;
    let p = logits.sigmoid()?;
    let inter = p.mul(target)?.sum()?.scale(2.0)?.add_scalar(1.0)?;
    let denom = p.sum()?.add(&target.sum()?)?.add_scalar(1.0)?;
    let dice = inter.div(&denom)?.neg()?.add_scalar(1.0)?;
    bce.add(&dice)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegNetConfig {
    pub widths: [usize; 3],
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub threshold: f64,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        SegNetConfig { widths: [10, 20, 40], steps: 300, batch_size: 2, learning_rate: 1e-3, threshold: 0.5 }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.batch_size == 0 || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("invalid segmentation settings {self:?}")));
        }
        Ok(())
    }
}

/// Trains on `(y, m_st)` pairs for `cfg.steps` Adam steps over seeded
/// shuffles of `cubes`. Returns the net and the per-step losses.
pub fn train_segnet<S: Scalar>(cfg: &SegNetConfig, cubes: &[TumorCube], seed: u64) -> Result<(TinySegNet<S>, Vec<f64>)> {
    cfg.validate()?;
    if cubes.is_empty() {
        return Err(Error::arg("train_segnet", "no training cubes"));
    }
    let mut net = TinySegNet::<S>::new(cfg.widths, seed)?;
    let mut adam = Adam::new(AdamConfig::default(), cfg.learning_rate, &mut net);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut epoch = 0;
    'outer: loop {
        for chunk in epoch_order(cubes.len(), seed, epoch).chunks(cfg.batch_size) {
            if losses.len() == cfg.steps {
                break 'outer;
            }
            let refs: Vec<&TumorCube> = chunk.iter().map(|&i| &cubes[i]).collect();
            let batch = Batch::<S>::from_cubes(&refs)?;
            net.zero_grad();
            let loss = segmentation_loss(&net.logits(&batch.y)?, &batch.m_st)?;
            let l = loss.item().as_f64();
            if !l.is_finite() {
                return Err(Error::NonFinite { op: "segmentation_loss" });
            }
            loss.backward()?;
            adam.step(&mut net)?;
            losses.push(l);
        }
        epoch += 1;
    }
    Ok((net, losses))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_width_parameter_count() {
        let mut net = TinySegNet::<f32>::new([10, 20, 40], 0).unwrap();
        assert_eq!(net.param_count(), 111_121);
    }

    #[test]
    fn loss_matches_scalar_oracle() {
        let z = [-2.0f64, 0.5, 3.0, -0.1];
        let t = [0.0f64, 1.0, 1.0, 0.0];
        let got = segmentation_loss(&Tensor::from_vec(z.to_vec(), &[4]).unwrap(), &Tensor::from_vec(t.to_vec(), &[4]).unwrap()).unwrap().item();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let bce: f64 = z.iter().zip(&t).map(|(&z, &t)| -(t * sig(z).ln() + (1.0 - t) * (1.0 - sig(z)).ln())).sum::<f64>() / 4.0;
        let pt: f64 = z.iter().zip(&t).map(|(&z, &t)| sig(z) * t).sum();
        let ps: f64 = z.iter().map(|&z| sig(z)).sum();
        let want = bce + 1.0 - (2.0 * pt + 1.0) / (ps + 2.0 + 1.0);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn probabilities_are_open_unit_interval_and_seeded() {
        let net = TinySegNet::<f64>::new([2, 2, 2], 3).unwrap();
        let x = Tensor::from_vec((0..64).map(|i| (i as f64 * 0.37).sin()).collect(), &[1, 1, 4, 4, 4]).unwrap();
        let p = net.probabilities(&x).unwrap();
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let mut a = TinySegNet::<f32>::new([2, 2, 2], 3).unwrap();
        let mut b = TinySegNet::<f32>::new([2, 2, 2], 3).unwrap();
        assert_eq!(a.param_values(), b.param_values());
    }
}
