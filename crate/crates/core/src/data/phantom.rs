//! Procedural training cubes: a smooth organ-like background with one
//! textured superellipsoid lesion.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_cube, index, BoundaryParams, IntensityDomain, MaskVolume, Provenance, TumorCube, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub side: usize,
    /// Bounds on the lesion's share of the cube's voxels.
    pub min_tumor_fraction: f64,
    pub max_tumor_fraction: f64,
    pub boundary: BoundaryParams,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig { side: 64, min_tumor_fraction: 0.005, max_tumor_fraction: 0.08, boundary: BoundaryParams::default() }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.min_tumor_fraction, self.max_tumor_fraction);
        if self.side < 4 {
            return Err(Error::Config(format!("phantom side {} is below 4", self.side)));
        }
        if !(0.0 < lo && lo < hi && hi < 0.5) {
            return Err(Error::Config(format!("tumor fraction bounds [{lo}, {hi}] must satisfy 0 < lo < hi < 0.5")));
        }
        Ok(())
    }
}

struct Wave {
    freq: [f64; 3],
    phase: f64,
    amp: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, max_freq: f64, amp: f64) -> Self {
        Wave {
            freq: [rng.random_range(-max_freq..max_freq), rng.random_range(-max_freq..max_freq), rng.random_range(-max_freq..max_freq)],
            phase: rng.random_range(0.0..TAU),
            amp: amp * rng.random_range(0.5..1.0),
        }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        self.amp * (TAU * (self.freq[0] * p[0] + self.freq[1] * p[1] + self.freq[2] * p[2]) + self.phase).cos()
    }
}

struct Lesion {
    center: [f64; 3],
    radii: [f64; 3],
    power: f64,
}

impl Lesion {
    fn contains(&self, p: [f64; 3], scale: f64) -> bool {
        (0..3).map(|a| ((p[a] - self.center[a]) / (self.radii[a] * scale)).abs().powf(self.power)).sum::<f64>() <= 1.0
    }

    fn rasterize(&self, side: usize, scale: f64) -> MaskVolume {
        let d = [side; 3];
        let mut m = MaskVolume::empty(d);
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    let p = [(x as f64 + 0.5) / side as f64, (y as f64 + 0.5) / side as f64, (z as f64 + 0.5) / side as f64];
                    m.data[index(d, x, y, z)] = u8::from(self.contains(p, scale));
                }
            }
        }
        m
    }
}

/// Cube number `index` of the dataset drawn with `seed`.
pub fn phantom_cube(cfg: &PhantomConfig, seed: u64, idx: usize) -> Result<TumorCube> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx as u64);
    let side = cfg.side;
    let n = (side * side * side) as f64;

    let organ_center: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.4..0.6));
    let organ_radii: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.45..0.7));
    let organ_level = rng.random_range(0.45..0.6);
    let background: Vec<Wave> = (0..4).map(|_| Wave::random(&mut rng, 2.0, 0.06)).collect();

    let bright = rng.random_bool(0.5);
    let tumor_level = if bright { rng.random_range(0.72..0.88) } else { rng.random_range(0.12..0.28) };
    let texture: Vec<Wave> = (0..3).map(|_| Wave::random(&mut rng, 6.0, 0.04)).collect();
    let lesion = Lesion {
        center: std::array::from_fn(|_| rng.random_range(0.35..0.65)),
        radii: std::array::from_fn(|_| rng.random_range(0.1..0.2)),
        power: rng.random_range(1.6..3.0),
    };
    let grain_seed: u64 = rng.random();

    // Scale the lesion until its voxel share lands inside the bounds.
    let target = (cfg.min_tumor_fraction * cfg.max_tumor_fraction).sqrt();
    let mut scale = 1.0;
    let mut mask = lesion.rasterize(side, scale);
    for _ in 0..32 {
        let frac = mask.count() as f64 / n;
        if frac >= cfg.min_tumor_fraction && frac <= cfg.max_tumor_fraction {
            break;
        }
        scale *= (target / frac.max(0.5 / n)).cbrt();
        mask = lesion.rasterize(side, scale);
    }
    let frac = mask.count() as f64 / n;
    if frac < cfg.min_tumor_fraction || frac > cfg.max_tumor_fraction {
        return Err(Error::Config(format!("side {side} cannot realize a tumor fraction within the configured bounds (got {frac:.4})")));
    }

    let mut grain = ChaCha8Rng::seed_from_u64(grain_seed);
    let d = [side; 3];
    let mut y = Volume::filled(d, 0.0, IntensityDomain::Normalized);
    for x in 0..side {
        for yy in 0..side {
            for z in 0..side {
                let p = [(x as f64 + 0.5) / side as f64, (yy as f64 + 0.5) / side as f64, (z as f64 + 0.5) / side as f64];
                let r2: f64 = (0..3).map(|a| ((p[a] - organ_center[a]) / organ_radii[a]).powi(2)).sum();
                let organ = 1.0 / (1.0 + ((r2 - 1.0) * 8.0).exp());
                let mut v = 0.15 + (organ_level - 0.15) * organ + background.iter().map(|w| w.at(p)).sum::<f64>();
                let i = index(d, x, yy, z);
                if mask.data[i] == 1 {
                    v = tumor_level + texture.iter().map(|w| w.at(p)).sum::<f64>();
                }
                v += grain.random_range(-0.01..0.01);
                y.data[i] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    build_cube(y, mask, cfg.boundary, Provenance { source: format!("phantom-{seed}"), component: idx })
}

/// `n` cubes; cube `i` depends only on `(seed, i)`, so generation order
/// does not affect the result.
pub fn phantom_dataset(n: usize, seed: u64, cfg: &PhantomConfig) -> Result<Vec<TumorCube>> {
    (0..n).into_par_iter().map(|i| phantom_cube(cfg, seed, i)).collect()
}
