//! Binary morphology with a cubic structuring element and the soft
//! boundary mask built from it.

use serde::{Deserialize, Serialize};

use super::{index, MaskVolume, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryParams {
    /// Morphology radius in voxels.
    pub radius: usize,
    /// Gaussian standard deviation in voxels.
    pub sigma: f64,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        BoundaryParams { radius: 2, sigma: 1.0 }
    }
}

/// Separable running max (`dilate`) or min along one axis over a window
/// of half-width `r`; voxels outside the grid count as background.
fn filter_axis(data: &[u8], dims: [usize; 3], axis: usize, r: usize, dilate: bool) -> Vec<u8> {
    let mut out = vec![0u8; data.len()];
    let n = dims[axis];
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let mut lines = Vec::new();
    for x in 0..if axis == 0 { 1 } else { dims[0] } {
        for y in 0..if axis == 1 { 1 } else { dims[1] } {
            for z in 0..if axis == 2 { 1 } else { dims[2] } {
                lines.push(index(dims, x, y, z));
            }
        }
    }
    for base in lines {
        // Prefix counts of foreground along the line.
        let mut prefix = vec![0usize; n + 1];
        for k in 0..n {
            prefix[k + 1] = prefix[k] + data[base + k * stride] as usize;
        }
        for k in 0..n {
            let lo = k.saturating_sub(r);
            let hi = (k + r).min(n - 1);
            let ones = prefix[hi + 1] - prefix[lo];
            let v = if dilate { ones > 0 } else { ones == 2 * r + 1 };
            out[base + k * stride] = v as u8;
        }
    }
    out
}

fn morph(m: &MaskVolume, r: usize, dilate: bool) -> MaskVolume {
    let mut data = m.data.clone();
    for axis in 0..3 {
        data = filter_axis(&data, m.dims, axis, r, dilate);
    }
    MaskVolume { dims: m.dims, data }
}

/// Dilation by the `(2r+1)^3` cube.
pub fn dilate(m: &MaskVolume, r: usize) -> MaskVolume {
    morph(m, r, true)
}

/// Erosion by the `(2r+1)^3` cube; the outside of the grid is background.
pub fn erode(m: &MaskVolume, r: usize) -> MaskVolume {
    morph(m, r, false)
}

/// Separable Gaussian with the kernel truncated at `ceil(3 sigma)` and
/// renormalized; zero outside the grid.
pub fn gaussian_blur(v: &Volume, sigma: f64) -> Result<Volume> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg("gaussian_blur", format!("sigma must be positive, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let kernel: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let dims = v.dims;
    let mut cur: Vec<f64> = v.data.iter().map(|&x| x as f64).collect();
    for axis in 0..3 {
        let mut next = vec![0.0; cur.len()];
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    let p = [x as i64, y as i64, z as i64];
                    let mut acc = 0.0;
                    for (j, w) in kernel.iter().enumerate() {
                        let mut q = p;
                        q[axis] += j as i64 - r;
                        if q[axis] < 0 || q[axis] >= dims[axis] as i64 {
                            continue;
                        }
                        acc += w * cur[index(dims, q[0] as usize, q[1] as usize, q[2] as usize)];
                    }
                    next[index(dims, x, y, z)] = acc;
                }
            }
        }
        cur = next;
    }
    Ok(Volume { dims, data: cur.into_iter().map(|x| x as f32).collect(), spacing: v.spacing, domain: v.domain })
}

/// Soft boundary weight: the shell `dilate(M, r) & !erode(M, r)` blurred by
/// a Gaussian and clamped to `[0, 1]`.
pub fn boundary_mask(m_st: &MaskVolume, params: BoundaryParams) -> Result<Volume> {
    if params.radius < 1 {
        return Err(Error::arg("boundary_mask", "radius must be at least 1"));
    }
    let outer = dilate(m_st, params.radius);
    let inner = erode(m_st, params.radius);
    let shell = MaskVolume { dims: m_st.dims, data: outer.data.iter().zip(&inner.data).map(|(&a, &b)| a & (1 - b)).collect() };
    let mut soft = gaussian_blur(&shell.to_volume(), params.sigma)?;
    for v in soft.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(soft)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(m: &MaskVolume, r: i64, dilate: bool) -> MaskVolume {
        let d = m.dims;
        let mut out = MaskVolume::empty(d);
        for x in 0..d[0] {
            for y in 0..d[1] {
                for z in 0..d[2] {
                    let mut any = false;
                    let mut all = true;
                    for dx in -r..=r {
                        for dy in -r..=r {
                            for dz in -r..=r {
                                let q = [x as i64 + dx, y as i64 + dy, z as i64 + dz];
                                let inside = q.iter().zip(&d).all(|(&c, &e)| c >= 0 && c < e as i64);
                                let v = inside && m.at(q[0] as usize, q[1] as usize, q[2] as usize);
                                any |= v;
                                all &= v;
                            }
                        }
                    }
                    out.data[index(d, x, y, z)] = u8::from(if dilate { any } else { all });
                }
            }
        }
        out
    }

    fn solid_cube(side: usize, lo: usize, ext: usize) -> MaskVolume {
        let d = [side; 3];
        let mut m = MaskVolume::empty(d);
        for x in lo..lo + ext {
            for y in lo..lo + ext {
                for z in lo..lo + ext {
                    m.data[index(d, x, y, z)] = 1;
                }
            }
        }
        m
    }

    #[test]
    fn morphology_matches_brute_force() {
        let mut m = solid_cube(12, 3, 5);
        m.data[index(m.dims, 0, 0, 1)] = 1;
        m.data[index(m.dims, 10, 2, 7)] = 1;
        for r in 1..3 {
            assert_eq!(dilate(&m, r), brute(&m, r as i64, true));
            assert_eq!(erode(&m, r), brute(&m, r as i64, false));
        }
    }

    #[test]
    fn empty_mask_gives_zero_boundary() {
        let b = boundary_mask(&MaskVolume::empty([8, 8, 8]), BoundaryParams::default()).unwrap();
        assert!(b.data.iter().all(|&v| v == 0.0));
        assert!(boundary_mask(&MaskVolume::empty([4, 4, 4]), BoundaryParams { radius: 0, sigma: 1.0 }).is_err());
    }

    #[test]
    fn solid_cube_shell_support() {
        // 12^3 cube at 6..18 in a 24^3 grid, r = 2: the shell spans 4..20
        // minus the eroded core 8..16; the blur adds ceil(3 sigma) = 3 voxels.
        let m = solid_cube(24, 6, 12);
        let b = boundary_mask(&m, BoundaryParams::default()).unwrap();
        let d = m.dims;
        for x in 0..24 {
            for y in 0..24 {
                for z in 0..24 {
                    let v = b.data[index(d, x, y, z)];
                    assert!((0.0..=1.0).contains(&v));
                    let cheb_out = [x, y, z].iter().map(|&c| if c < 6 { 6 - c } else { c.saturating_sub(17) }).max().unwrap();
                    if cheb_out > 5 {
                        assert_eq!(v, 0.0, "support leaks at {x},{y},{z}");
                    }
                }
            }
        }
        // The core center is 4 voxels from the shell.
        assert_eq!(b.at(12, 12, 12), 0.0);
        assert!(b.at(6, 12, 12) > 0.5);
    }

    #[test]
    fn gaussian_matches_direct_sum() {
        let mut v = Volume::filled([7, 6, 5], 0.0, super::super::IntensityDomain::Normalized);
        v.data[index(v.dims, 3, 2, 2)] = 1.0;
        v.data[index(v.dims, 0, 5, 4)] = 0.5;
        let b = gaussian_blur(&v, 1.0).unwrap();
        let k = |d: i64| -> f64 {
            let z: f64 = (-3..=3).map(|j: i64| (-(j * j) as f64 / 2.0).exp()).sum();
            if d.abs() > 3 {
                0.0
            } else {
                (-(d * d) as f64 / 2.0).exp() / z
            }
        };
        for x in 0..7i64 {
            for y in 0..6i64 {
                for z in 0..5i64 {
                    let want = k(x - 3) * k(y - 2) * k(z - 2) + 0.5 * k(x) * k(y - 5) * k(z - 4);
                    let got = b.data[index(v.dims, x as usize, y as usize, z as usize)] as f64;
                    assert!((got - want).abs() < 1e-6);
                }
            }
        }
    }
}
