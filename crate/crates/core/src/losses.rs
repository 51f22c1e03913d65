//! Hybrid training objective.
//!
//! `total = adv + lambda * mm + delta * percep + eta * sty` with
//! `mm = alpha * cw + beta * st + gamma * sb`.
//!
//! Volumes are `1 x X x Y x Z` or `N x 1 x X x Y x Z`; every loss is averaged
//! over the batch. Masked means divide by the total voxel count, not by the
//! mask volume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GeneratorOutput, SIDE_OUTPUTS};
use crate::nn::FeatureExtractor;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Boundary weight. Training overrides this with the ramp schedule.
    pub gamma: f64,
    pub lambda: f64,
    pub delta: f64,
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 10.0, gamma: 1.0, lambda: 1.0, delta: 1.0, eta: 100.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.lambda, self.delta, self.eta];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        if self.gamma > 1.0 {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        Ok(())
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        LossWeights { gamma, ..self }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_adv: f64,
    pub l_cw: f64,
    pub l_st: f64,
    pub l_sb: f64,
    pub l_mm: f64,
    pub l_percep: f64,
    pub l_sty: f64,
    pub l_total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l_adv, self.l_cw, self.l_st, self.l_sb, self.l_mm, self.l_percep, self.l_sty, self.l_total].iter().all(|v| v.is_finite())
    }
}

/// Scalar loss terms before weighting.
#[derive(Debug, Clone)]
pub struct LossTerms<S: Scalar = f32> {
    pub adv: Tensor<S>,
    pub cw: Tensor<S>,
    pub st: Tensor<S>,
    pub sb: Tensor<S>,
    pub percep: Tensor<S>,
    pub sty: Tensor<S>,
}

/// Discriminator objective: `BCE(d_real, 1) + BCE(d_fake, 0)`, each a mean over patches.
pub fn discriminator_loss<S: Scalar>(d_real: &Tensor<S>, d_fake: &Tensor<S>) -> Result<Tensor<S>> {
    d_real.bce_mean(1.0)?.add(&d_fake.bce_mean(0.0)?)
}

/// Non-saturating generator objective `BCE(d_fake, 1)`.
pub fn generator_adversarial_loss<S: Scalar>(d_fake: &Tensor<S>) -> Result<Tensor<S>> {
    d_fake.bce_mean(1.0)
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        let axis = a.shape().iter().zip(b.shape()).position(|(x, y)| x != y);
        return Err(Error::dim(op, axis, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute error over all voxels.
pub fn content_loss<S: Scalar>(y: &Tensor<S>, y_hat: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape("content_loss", y, y_hat)?;
    y.sub(y_hat)?.abs()?.mean()
}

/// `mean(mask * |y - y_hat|)`.
pub fn masked_l1<S: Scalar>(op: &'static str, y: &Tensor<S>, y_hat: &Tensor<S>, mask: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(op, y, y_hat)?;
    same_shape(op, y, mask)?;
    y.sub(y_hat)?.abs()?.mul(mask)?.mean()
}

pub fn tumor_loss<S: Scalar>(y: &Tensor<S>, y_hat: &Tensor<S>, m_st: &Tensor<S>) -> Result<Tensor<S>> {
    masked_l1("tumor_loss", y, y_hat, m_st)
}

/// Sum over the side outputs of the boundary-weighted mean absolute error.
pub fn boundary_loss<S: Scalar>(y: &Tensor<S>, sides: &[Tensor<S>], m_sb: &Tensor<S>) -> Result<Tensor<S>> {
    if sides.len() != SIDE_OUTPUTS {
        return Err(Error::arg("boundary_loss", format!("expected {SIDE_OUTPUTS} side outputs, got {}", sides.len())));
    }
    let mut total = masked_l1("boundary_loss", y, &sides[0], m_sb)?;
    for phi in &sides[1..] {
        total = total.add(&masked_l1("boundary_loss", y, phi, m_sb)?)?;
    }
    Ok(total)
}

pub fn multi_mask_loss<S: Scalar>(w: &LossWeights, l_cw: &Tensor<S>, l_st: &Tensor<S>, l_sb: &Tensor<S>) -> Result<Tensor<S>> {
    l_cw.scale(w.alpha)?.add(&l_st.scale(w.beta)?)?.add(&l_sb.scale(w.gamma)?)
}

/// Rearranges a volume batch into `N*Z` single-channel `X x Y` slices.
/// Returns the slices with `(N, X, Y)`.
fn z_slices<S: Scalar>(op: &'static str, v: &Tensor<S>) -> Result<(Tensor<S>, usize, usize, usize)> {
    let v = match v.rank() {
        4 => v.reshape(&[1, v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]])?,
        5 => v.clone(),
        r => return Err(Error::dim(op, None, format!("expected a 1 x X x Y x Z volume or a batch of them, got rank {r}"))),
    };
    let sh = v.shape().to_vec();
    if sh[1] != 1 {
        return Err(Error::dim(op, Some(1), format!("expected one channel, got {}", sh[1])));
    }
    let (n, x, y, z) = (sh[0], sh[2], sh[3], sh[4]);
    let slices = v.permute(&[0, 4, 1, 2, 3])?.reshape(&[n * z, 1, x, y])?;
    Ok((slices, n, x, y))
}

/// Slice-wise feature distance: for every z-slice and every extractor stage
/// `p`, `|phi_p(y_d) - phi_p(y_hat_d)|_1 / (X * Y)`, summed over slices and
/// stages and averaged over the batch.
pub fn perceptual_loss<S: Scalar>(fx: &FeatureExtractor<S>, y: &Tensor<S>, y_hat: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape("perceptual_loss", y, y_hat)?;
    let (sy, n, x, yy) = z_slices("perceptual_loss", y)?;
    let (sh, _, _, _) = z_slices("perceptual_loss", y_hat)?;
    let (fy, fh) = (fx.extract(&sy)?, fx.extract(&sh)?);
    let norm = 1.0 / (x * yy * n) as f64;
    let mut total: Option<Tensor<S>> = None;
    for (a, b) in fy.iter().zip(&fh) {
        let term = a.sub(b)?.abs()?.sum()?.scale(norm)?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::arg("perceptual_loss", "feature extractor has no stages"))
}

/// Gram matrix over spatial sites: `C x H x W -> C x C` (or batched
/// `B x C x H x W -> B x C x C`), entry `(i, j)` is the inner product of
/// channel maps `i` and `j`.
pub fn gram<S: Scalar>(features: &Tensor<S>) -> Result<Tensor<S>> {
    let sh = features.shape();
    match sh.len() {
        3 => {
            let f = features.reshape(&[sh[0], sh[1] * sh[2]])?;
            f.matmul(&f.transpose(0, 1)?)
        }
        4 => {
            let f = features.reshape(&[sh[0], sh[1], sh[2] * sh[3]])?;
            f.matmul(&f.transpose(1, 2)?)
        }
        r => Err(Error::dim("gram", None, format!("expected C x H x W or B x C x H x W, got rank {r}"))),
    }
}

/// Slice-wise Gram distance: `|G_p(y_d) - G_p(y_hat_d)|_1 / (p^2 X Y)`
/// summed over slices and stages `p = 1..P`, averaged over the batch.
pub fn style_loss<S: Scalar>(fx: &FeatureExtractor<S>, y: &Tensor<S>, y_hat: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape("style_loss", y, y_hat)?;
    let (sy, n, x, yy) = z_slices("style_loss", y)?;
    let (sh, _, _, _) = z_slices("style_loss", y_hat)?;
    let (fy, fh) = (fx.extract(&sy)?, fx.extract(&sh)?);
    let mut total: Option<Tensor<S>> = None;
    for (p, (a, b)) in fy.iter().zip(&fh).enumerate() {
        let p = (p + 1) as f64;
        let term = gram(a)?.sub(&gram(b)?)?.abs()?.sum()?.scale(1.0 / (p * p * (x * yy * n) as f64))?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::arg("style_loss", "feature extractor has no stages"))
}

/// Weights the terms into the total objective and reports every component.
pub fn hybrid_loss<S: Scalar>(w: &LossWeights, terms: &LossTerms<S>) -> Result<(Tensor<S>, LossReport)> {
    let mm = multi_mask_loss(w, &terms.cw, &terms.st, &terms.sb)?;
    let total = terms.adv.add(&mm.scale(w.lambda)?)?.add(&terms.percep.scale(w.delta)?)?.add(&terms.sty.scale(w.eta)?)?;
    let f = |t: &Tensor<S>| t.item().as_f64();
    let report = LossReport {
        l_adv: f(&terms.adv),
        l_cw: f(&terms.cw),
        l_st: f(&terms.st),
        l_sb: f(&terms.sb),
        l_mm: f(&mm),
        l_percep: f(&terms.percep),
        l_sty: f(&terms.sty),
        l_total: f(&total),
    };
    Ok((total, report))
}

/// Every generator-side term for one batch.
pub fn generator_terms<S: Scalar>(
    fx: &FeatureExtractor<S>,
    y: &Tensor<S>,
    out: &GeneratorOutput<S>,
    m_st: &Tensor<S>,
    m_sb: &Tensor<S>,
    d_fake: &Tensor<S>,
) -> Result<LossTerms<S>> {
    Ok(LossTerms {
        adv: generator_adversarial_loss(d_fake)?,
        cw: content_loss(y, &out.image)?,
        st: tumor_loss(y, &out.image, m_st)?,
        sb: boundary_loss(y, &out.sides, m_sb)?,
        percep: perceptual_loss(fx, y, &out.image)?,
        sty: style_loss(fx, y, &out.image)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.random_range(0.0..1.0)).collect(), shape).unwrap()
    }

    fn s(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn adversarial_reference_values() {
        let eps = 1e-7;
        let d = discriminator_loss(&Tensor::<f64>::full(&[1, 8, 8, 8], 1.0 - eps), &Tensor::full(&[1, 8, 8, 8], eps)).unwrap();
        assert!(d.item() < 1e-6);
        let g = generator_adversarial_loss(&Tensor::<f64>::full(&[2, 1, 4, 4, 4], 0.5)).unwrap();
        assert!((g.item() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(generator_adversarial_loss(&Tensor::<f64>::full(&[3], 1.5)).is_err());
    }

    #[test]
    fn adversarial_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (r, f) = (rand_t(&[2, 1, 3, 3, 3], &mut rng), rand_t(&[2, 1, 3, 3, 3], &mut rng));
        let n = r.numel() as f64;
        let want: f64 = r.data().iter().map(|p| -p.ln()).sum::<f64>() / n + f.data().iter().map(|p| -(1.0 - p).ln()).sum::<f64>() / n;
        assert!((discriminator_loss(&r, &f).unwrap().item() - want).abs() < 1e-12);
    }

    #[test]
    fn masked_losses_match_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (y, h) = (rand_t(&[1, 4, 4, 4], &mut rng), rand_t(&[1, 4, 4, 4], &mut rng));
        let m = Tensor::from_vec((0..64).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect(), &[1, 4, 4, 4]).unwrap();
        let cw: f64 = y.data().iter().zip(h.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 64.0;
        let st: f64 = y.data().iter().zip(h.data()).zip(m.data()).map(|((a, b), m)| m * (a - b).abs()).sum::<f64>() / 64.0;
        assert!((content_loss(&y, &h).unwrap().item() - cw).abs() < 1e-14);
        assert!((tumor_loss(&y, &h, &m).unwrap().item() - st).abs() < 1e-14);
        assert_eq!(tumor_loss(&y, &h, &Tensor::zeros(&[1, 4, 4, 4])).unwrap().item(), 0.0);
        assert!(content_loss(&y, &Tensor::zeros(&[1, 4, 4, 2])).is_err());
    }

    #[test]
    fn boundary_sums_side_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = rand_t(&[1, 3, 3, 3], &mut rng);
        let m = rand_t(&[1, 3, 3, 3], &mut rng);
        let sides: Vec<_> = (0..4).map(|_| rand_t(&[1, 3, 3, 3], &mut rng)).collect();
        let mut want = 0.0;
        for phi in &sides {
            for i in 0..27 {
                want += m.data()[i] * (y.data()[i] - phi.data()[i]).abs() / 27.0;
            }
        }
        assert!((boundary_loss(&y, &sides, &m).unwrap().item() - want).abs() < 1e-13);
        let same = vec![y.clone(); 4];
        assert_eq!(boundary_loss(&y, &same, &m).unwrap().item(), 0.0);
        assert!(matches!(boundary_loss(&y, &sides[..3], &m), Err(Error::Argument { .. })));
    }

    #[test]
    fn multi_mask_arithmetic() {
        let w = LossWeights::default();
        let v = multi_mask_loss(&w, &s(0.1), &s(0.02), &s(0.05)).unwrap().item();
        assert!((v - 0.35).abs() < 1e-12);
        let v0 = multi_mask_loss(&w.with_gamma(0.0), &s(0.1), &s(0.02), &s(0.05)).unwrap().item();
        assert_eq!(v0, 0.1 + 10.0 * 0.02);
    }

    #[test]
    fn hybrid_arithmetic() {
        let w = LossWeights::default();
        let terms = |adv, mm: f64, percep, sty| LossTerms { adv: s(adv), cw: s(mm), st: s(0.0), sb: s(0.0), percep: s(percep), sty: s(sty) };
        let (_, r) = hybrid_loss(&w, &terms(0.3, 0.0, 0.0, 0.0)).unwrap();
        assert!((r.l_total - 0.3).abs() < 1e-15);
        let (t, r) = hybrid_loss(&w, &terms(0.2, 0.35, 0.01, 0.001)).unwrap();
        assert!((t.item() - 0.66).abs() < 1e-12);
        assert!((r.l_mm - 0.35).abs() < 1e-15);
    }

    #[test]
    fn gram_small_cases() {
        let g = gram(&Tensor::<f64>::zeros(&[3, 2, 2])).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        let id = Tensor::<f64>::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[2, 2, 2]).unwrap();
        assert_eq!(gram(&id).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = rand_t(&[3, 2, 2], &mut rng);
        let g = gram(&f).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..4).map(|k| f.data()[i * 4 + k] * f.data()[j * 4 + k]).sum();
                assert!((g.data()[i * 3 + j] - dot).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn feature_losses_vanish_at_identity_and_are_symmetric() {
        let fx = FeatureExtractor::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a, b) = (rand_t(&[1, 8, 8, 3], &mut rng), rand_t(&[1, 8, 8, 3], &mut rng));
        assert_eq!(perceptual_loss(&fx, &a, &a).unwrap().item(), 0.0);
        assert_eq!(style_loss(&fx, &a, &a).unwrap().item(), 0.0);
        let ab = perceptual_loss(&fx, &a, &b).unwrap().item();
        assert!(ab > 0.0);
        assert!((ab - perceptual_loss(&fx, &b, &a).unwrap().item()).abs() < 1e-14);
    }

    #[test]
    fn perceptual_matches_per_slice_oracle() {
        let fx = FeatureExtractor::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y, z) = (6, 5, 2);
        let (a, b) = (rand_t(&[1, x, y, z], &mut rng), rand_t(&[1, x, y, z], &mut rng));
        let slice = |v: &Tensor<f64>, d: usize| {
            let data = (0..x * y).map(|i| v.data()[i * z + d]).collect();
            Tensor::from_vec(data, &[1, x, y]).unwrap()
        };
        let (mut percep, mut sty) = (0.0, 0.0);
        for d in 0..z {
            let (fa, fb) = (fx.extract(&slice(&a, d)).unwrap(), fx.extract(&slice(&b, d)).unwrap());
            for (p, (ma, mb)) in fa.iter().zip(&fb).enumerate() {
                percep += ma.data().iter().zip(mb.data()).map(|(u, v)| (u - v).abs()).sum::<f64>() / (x * y) as f64;
                let (c, hw) = (ma.shape()[0], ma.shape()[1] * ma.shape()[2]);
                let mut g = 0.0;
                for i in 0..c {
                    for j in 0..c {
                        let ga: f64 = (0..hw).map(|k| ma.data()[i * hw + k] * ma.data()[j * hw + k]).sum();
                        let gb: f64 = (0..hw).map(|k| mb.data()[i * hw + k] * mb.data()[j * hw + k]).sum();
                        g += (ga - gb).abs();
                    }
                }
                sty += g / (((p + 1) * (p + 1) * x * y) as f64);
            }
        }
        assert!((perceptual_loss(&fx, &a, &b).unwrap().item() - percep).abs() < 1e-12);
        assert!((style_loss(&fx, &a, &b).unwrap().item() - sty).abs() < 1e-12);
    }

    #[test]
    fn style_ignores_spatial_permutation_within_slices() {
        // An isolated blob moved by a multiple of the total stride permutes
        // every feature map's sites, so the Gram matrices agree exactly.
        let fx = FeatureExtractor::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let blob: Vec<f64> = (0..16).map(|_| rng.random_range(0.1..1.0)).collect();
        let place = |row0: usize| {
            let mut v = vec![0.0; 32 * 8];
            for i in 0..4 {
                for j in 0..4 {
                    v[(row0 + i) * 8 + 2 + j] = blob[i * 4 + j];
                }
            }
            Tensor::from_vec(v, &[1, 32, 8, 1]).unwrap()
        };
        let (y, p) = (place(8), place(16));
        assert!(content_loss(&y, &p).unwrap().item() > 0.0);
        assert!(style_loss(&fx, &y, &p).unwrap().item() < 1e-12);
    }

    #[test]
    fn batch_average() {
        let fx = FeatureExtractor::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (a, b) = (rand_t(&[1, 8, 8, 2], &mut rng), rand_t(&[1, 8, 8, 2], &mut rng));
        let (c, d) = (rand_t(&[1, 8, 8, 2], &mut rng), rand_t(&[1, 8, 8, 2], &mut rng));
        let stack = |u: &Tensor<f64>, v: &Tensor<f64>| crate::tensor::concat(&[&u.reshape(&[1, 1, 8, 8, 2]).unwrap(), &v.reshape(&[1, 1, 8, 8, 2]).unwrap()], 0).unwrap();
        let both = perceptual_loss(&fx, &stack(&a, &c), &stack(&b, &d)).unwrap().item();
        let each = perceptual_loss(&fx, &a, &b).unwrap().item() + perceptual_loss(&fx, &c, &d).unwrap().item();
        assert!((both - each / 2.0).abs() < 1e-12);
    }
}
