use serde::{Deserialize, Serialize};

use super::{boundary_mask, connected_components_3d, index, BoundaryParams, IntensityDomain, MaskVolume, Provenance, TumorCube, Volume};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// HU window and small-component threshold for one CT corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetProfile {
    pub name: String,
    pub hu_lo: f32,
    pub hu_hi: f32,
    /// Components with fewer voxels are dropped.
    pub min_component: usize,
}

impl DatasetProfile {
    pub fn kits() -> Self {
        DatasetProfile { name: "kits".into(), hu_lo: -200.0, hu_hi: 300.0, min_component: 200 }
    }

    pub fn lits() -> Self {
        DatasetProfile { name: "lits".into(), hu_lo: -100.0, hu_hi: 200.0, min_component: 400 }
    }

    pub fn luna() -> Self {
        DatasetProfile { name: "luna".into(), hu_lo: -1000.0, hu_hi: 600.0, min_component: 100 }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "kits" => Some(Self::kits()),
            "lits" => Some(Self::lits()),
            "luna" => Some(Self::luna()),
            _ => None,
        }
    }
}

pub fn hu_window(v: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    if !(lo < hi) {
        return Err(Error::arg("hu_window", format!("window [{lo}, {hi}] is empty")));
    }
    Ok(Volume { data: v.data.iter().map(|x| x.clamp(lo, hi)).collect(), ..v.clone() })
}

/// Subtracts each axial slice's mean, then min-max scales the whole volume
/// to `[0, 1]`. A volume that is constant after the first step maps to 0.5.
pub fn normalize(v: &Volume) -> Volume {
    let [nx, ny, nz] = v.dims;
    let mut centered: Vec<f64> = v.data.iter().map(|&x| x as f64).collect();
    for z in 0..nz {
        let mut sum = 0.0;
        for x in 0..nx {
            for y in 0..ny {
                sum += centered[index(v.dims, x, y, z)];
            }
        }
        let mean = sum / (nx * ny) as f64;
        for x in 0..nx {
            for y in 0..ny {
                centered[index(v.dims, x, y, z)] -= mean;
            }
        }
    }
    let lo = centered.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = centered.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi > lo { centered.iter().map(|&c| (((c - lo) / (hi - lo)) as f32).clamp(0.0, 1.0)).collect() } else { vec![0.5; v.len()] };
    Volume { dims: v.dims, data, spacing: v.spacing, domain: IntensityDomain::Normalized }
}

/// Half-open voxel box `lo..hi` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CropBox {
    pub fn extent(&self) -> [usize; 3] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]]
    }

    /// Bounding box of the foreground grown by `pad` per side, clamped to the grid.
    pub fn around(m: &MaskVolume, pad: usize) -> Option<Self> {
        let [nx, ny, nz] = m.dims;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    if m.data[index(m.dims, x, y, z)] == 1 {
                        any = true;
                        for (a, c) in [x, y, z].into_iter().enumerate() {
                            lo[a] = lo[a].min(c);
                            hi[a] = hi[a].max(c + 1);
                        }
                    }
                }
            }
        }
        any.then(|| {
            let mut b = CropBox { lo, hi };
            for a in 0..3 {
                b.lo[a] = b.lo[a].saturating_sub(pad);
                b.hi[a] = (b.hi[a] + pad).min(m.dims[a]);
            }
            b
        })
    }

    pub fn crop_volume(&self, v: &Volume) -> Volume {
        let e = self.extent();
        let mut data = Vec::with_capacity(e.iter().product());
        for x in self.lo[0]..self.hi[0] {
            for y in self.lo[1]..self.hi[1] {
                let start = index(v.dims, x, y, self.lo[2]);
                data.extend_from_slice(&v.data[start..start + e[2]]);
            }
        }
        Volume { dims: e, data, spacing: v.spacing, domain: v.domain }
    }

    pub fn crop_mask(&self, m: &MaskVolume) -> MaskVolume {
        let e = self.extent();
        let mut data = Vec::with_capacity(e.iter().product());
        for x in self.lo[0]..self.hi[0] {
            for y in self.lo[1]..self.hi[1] {
                let start = index(m.dims, x, y, self.lo[2]);
                data.extend_from_slice(&m.data[start..start + e[2]]);
            }
        }
        MaskVolume { dims: e, data }
    }

    /// Writes `patch` (extent of this box) into `v`.
    pub fn paste(&self, v: &mut Volume, patch: &Volume) {
        let e = self.extent();
        for x in 0..e[0] {
            for y in 0..e[1] {
                let dst = index(v.dims, self.lo[0] + x, self.lo[1] + y, self.lo[2]);
                let src = index(e, x, y, 0);
                v.data[dst..dst + e[2]].copy_from_slice(&patch.data[src..src + e[2]]);
            }
        }
    }
}

/// Crops `v` and the component mask to the component's padded bounding box.
pub fn extract_cube(v: &Volume, component: &MaskVolume, pad: usize) -> Result<(Volume, MaskVolume, CropBox)> {
    if v.dims != component.dims {
        return Err(Error::dim("extract_cube", None, format!("volume {:?} vs mask {:?}", v.dims, component.dims)));
    }
    let b = CropBox::around(component, pad).ok_or_else(|| Error::arg("extract_cube", "component is empty"))?;
    Ok((b.crop_volume(v), b.crop_mask(component), b))
}

/// Nearest-neighbour source index under the half-pixel convention.
fn nearest(o: usize, src: usize, dst: usize) -> usize {
    ((((o as f64 + 0.5) * src as f64) / dst as f64).floor() as usize).min(src - 1)
}

/// Trilinear for the image, nearest-neighbour for the mask.
pub fn resample_cube(image: &Volume, mask: &MaskVolume, dims: [usize; 3]) -> Result<(Volume, MaskVolume)> {
    if image.dims != mask.dims {
        return Err(Error::dim("resample", None, format!("image {:?} vs mask {:?}", image.dims, mask.dims)));
    }
    let t: Tensor<f64> = image.to_tensor();
    let r = t.resize_trilinear(dims)?;
    let mut img = Volume::from_tensor(&r, image.domain)?;
    img.spacing = None;
    if image.domain == IntensityDomain::Normalized {
        for v in img.data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    let mut m = MaskVolume::empty(dims);
    for x in 0..dims[0] {
        let sx = nearest(x, mask.dims[0], dims[0]);
        for y in 0..dims[1] {
            let sy = nearest(y, mask.dims[1], dims[1]);
            for z in 0..dims[2] {
                let sz = nearest(z, mask.dims[2], dims[2]);
                m.data[index(dims, x, y, z)] = mask.data[index(mask.dims, sx, sy, sz)];
            }
        }
    }
    Ok((img, m))
}

pub fn resample_to_64(image: &Volume, mask: &MaskVolume) -> Result<(Volume, MaskVolume)> {
    resample_cube(image, mask, [64; 3])
}

/// `y * (1 - mask)`.
pub fn erase_tumor(y: &Volume, m_st: &MaskVolume) -> Result<Volume> {
    if y.dims != m_st.dims {
        return Err(Error::dim("erase_tumor", None, format!("volume {:?} vs mask {:?}", y.dims, m_st.dims)));
    }
    Ok(Volume { data: y.data.iter().zip(&m_st.data).map(|(&v, &m)| if m == 1 { 0.0 } else { v }).collect(), ..y.clone() })
}

pub fn build_cube(y: Volume, m_st: MaskVolume, boundary: BoundaryParams, provenance: Provenance) -> Result<TumorCube> {
    let x_erased = erase_tumor(&y, &m_st)?;
    let m_sb = boundary_mask(&m_st, boundary)?;
    Ok(TumorCube { y, x_erased, m_st, m_sb, provenance })
}

/// Window, normalize, label, crop with `pad`, and resample every large
/// enough tumor component of one scan to a `side^3` cube.
pub fn extract_tumor_cubes(
    raw: &Volume,
    labels: &MaskVolume,
    profile: &DatasetProfile,
    side: usize,
    pad: usize,
    boundary: BoundaryParams,
    source: &str,
) -> Result<Vec<TumorCube>> {
    let v = normalize(&hu_window(raw, profile.hu_lo, profile.hu_hi)?);
    let mut cubes = Vec::new();
    for (i, comp) in connected_components_3d(labels, profile.min_component).iter().enumerate() {
        let (img, m, _) = extract_cube(&v, &comp.mask(), pad)?;
        let (img, m) = resample_cube(&img, &m, [side; 3])?;
        cubes.push(build_cube(img, m, boundary, Provenance { source: source.to_string(), component: i })?);
    }
    Ok(cubes)
}
