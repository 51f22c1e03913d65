//! Frozen multi-scale 2D embedding for the perceptual and style losses.
//!
//! Three stages of `3 x 3` stride-2 convolution followed by ReLU, with no
//! bias. Kernels are drawn from a fixed seed and rescaled so the Schur
//! bound `sqrt(max_row_sum * max_col_sum)` of each stage's absolute kernel
//! mass equals one, which makes every stage 1-Lipschitz in the L2 norm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{concat, conv2d, ConvGeometry, Scalar, Tensor};

pub const EXTRACTOR_SEED: u64 = 0x5EED;

const STAGE_CHANNELS: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone)]
pub struct FeatureExtractor<S: Scalar = f32> {
    stages: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for FeatureExtractor<S> {
    fn default() -> Self {
        Self::new(EXTRACTOR_SEED)
    }
}

impl<S: Scalar> FeatureExtractor<S> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut c_in = 1;
        let stages = STAGE_CHANNELS
            .iter()
            .map(|&c_out| {
                let raw: Vec<f64> = (0..c_out * c_in * 9).map(|_| normal.sample(&mut rng)).collect();
                let bound = schur_bound(&raw, c_out, c_in, 9);
                let data = raw.iter().map(|&w| S::of(w / bound)).collect();
                let w = Tensor::from_vec(data, &[c_out, c_in, 3, 3]).expect("stage shape");
                c_in = c_out;
                w
            })
            .collect();
        FeatureExtractor { stages }
    }

    /// Number of feature taps.
    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn stage_kernels(&self) -> &[Tensor<S>] {
        &self.stages
    }

    /// Feature maps after each stage for a `1 x X x Y` slice or an
    /// `N x 1 x X x Y` stack of slices. Map `p` (1-based) has extent
    /// `ceil(X / 2^p) x ceil(Y / 2^p)`; inputs are zero-padded to a multiple
    /// of `2^P` first and the maps cropped back.
    pub fn extract(&self, slices: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let batched = match slices.rank() {
            4 => true,
            3 => false,
            r => return Err(Error::dim("extract_features", None, format!("expected 1 x X x Y or N x 1 x X x Y, got rank {r}"))),
        };
        let x = if batched { slices.clone() } else { slices.reshape(&[1, slices.shape()[0], slices.shape()[1], slices.shape()[2]])? };
        if x.shape()[1] != 1 {
            return Err(Error::dim("extract_features", Some(1), format!("expected one channel, got {}", x.shape()[1])));
        }
        let (ex, ey) = (x.shape()[2], x.shape()[3]);
        let m = 1usize << self.depth();
        let mut h = pad_to_multiple(&x, m)?;
        let mut maps = Vec::with_capacity(self.depth());
        for (p, w) in self.stages.iter().enumerate() {
            h = conv2d(&h, w, None, ConvGeometry::new(2, 1, 1))?.relu()?;
            let f = 1usize << (p + 1);
            let (cx, cy) = (ex.div_ceil(f), ey.div_ceil(f));
            let mut map = h.clone();
            if map.shape()[2] != cx {
                map = map.narrow(2, 0, cx)?;
            }
            if map.shape()[3] != cy {
                map = map.narrow(3, 0, cy)?;
            }
            if !batched {
                map = map.reshape(&map.shape()[1..].to_vec())?;
            }
            maps.push(map);
        }
        Ok(maps)
    }
}

fn schur_bound(w: &[f64], c_out: usize, c_in: usize, taps: usize) -> f64 {
    let mass = |o: usize, c: usize| -> f64 { w[(o * c_in + c) * taps..(o * c_in + c + 1) * taps].iter().map(|v| v.abs()).sum() };
    let row = (0..c_out).map(|o| (0..c_in).map(|c| mass(o, c)).sum::<f64>()).fold(0.0, f64::max);
    let col = (0..c_in).map(|c| (0..c_out).map(|o| mass(o, c)).sum::<f64>()).fold(0.0, f64::max);
    (row * col).sqrt()
}

fn pad_to_multiple<S: Scalar>(x: &Tensor<S>, m: usize) -> Result<Tensor<S>> {
    let mut x = x.clone();
    for axis in [2, 3] {
        let e = x.shape()[axis];
        let extra = e.div_ceil(m) * m - e;
        if extra > 0 {
            let mut s = x.shape().to_vec();
            s[axis] = extra;
            x = concat(&[&x, &Tensor::zeros(&s)], axis)?;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.random_range(0.0..1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn zero_slice_gives_zero_maps() {
        let fx = FeatureExtractor::<f64>::default();
        for map in fx.extract(&Tensor::zeros(&[1, 16, 16])).unwrap() {
            assert!(map.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let x = random(&[1, 16, 16], &mut ChaCha8Rng::seed_from_u64(1));
        let a = FeatureExtractor::<f64>::new(EXTRACTOR_SEED).extract(&x).unwrap();
        let b = FeatureExtractor::<f64>::new(EXTRACTOR_SEED).extract(&x).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn map_extents_halve_per_stage() {
        let fx = FeatureExtractor::<f32>::default();
        let maps = fx.extract(&Tensor::zeros(&[1, 64, 64])).unwrap();
        let extents: Vec<_> = maps.iter().map(|m| (m.shape()[1], m.shape()[2])).collect();
        assert_eq!(extents, vec![(32, 32), (16, 16), (8, 8)]);
        assert_eq!(maps[2].shape()[0], 32);
    }

    #[test]
    fn odd_extents_are_padded_then_cropped() {
        let fx = FeatureExtractor::<f64>::default();
        let maps = fx.extract(&Tensor::zeros(&[3, 1, 13, 10])).unwrap();
        let extents: Vec<_> = maps.iter().map(|m| (m.shape()[2], m.shape()[3])).collect();
        assert_eq!(extents, vec![(7, 5), (4, 3), (2, 2)]);
    }

    #[test]
    fn each_stage_is_non_expansive() {
        let fx = FeatureExtractor::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let norm = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..10 {
            let a = random(&[1, 1, 16, 16], &mut rng);
            let b = random(&[1, 1, 16, 16], &mut rng);
            let (fa, fb) = (fx.extract(&a).unwrap(), fx.extract(&b).unwrap());
            let mut prev = norm(&a.sub(&b).unwrap());
            for (ma, mb) in fa.iter().zip(&fb) {
                let d = norm(&ma.sub(mb).unwrap());
                assert!(d <= prev + 1e-12, "{d} > {prev}");
                prev = d;
            }
        }
    }
}
