//! Volumes, masks, tumor cubes, and the preprocessing pipeline.
//!
//! Grids are stored x-major: voxel `(x, y, z)` lives at `(x * Y + y) * Z + z`,
//! matching the `C x X x Y x Z` tensor layout. The z axis indexes axial slices.

mod augment;
mod components;
mod morphology;
mod phantom;
mod preprocess;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use augment::{augment, Augmentation, RotationAxis};
pub use components::{connected_components_3d, label_components, Component};
pub use morphology::{boundary_mask, dilate, erode, gaussian_blur, BoundaryParams};
pub use phantom::{phantom_cube, phantom_dataset, PhantomConfig};
pub use preprocess::{
    build_cube, erase_tumor, extract_cube, extract_tumor_cubes, hu_window, normalize, resample_cube, resample_to_64, CropBox, DatasetProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityDomain {
    Hu,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub data: Vec<f32>,
    pub spacing: Option<[f32; 3]>,
    pub domain: IntensityDomain,
}

pub(crate) fn index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    (x * dims[1] + y) * dims[2] + z
}

fn check_dims(op: &'static str, dims: [usize; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::arg(op, format!("extents must be at least 1, got {dims:?}")));
    }
    if dims.iter().product::<usize>() != len {
        return Err(Error::arg(op, format!("{} values do not fill {dims:?}", len)));
    }
    Ok(())
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f32>, domain: IntensityDomain) -> Result<Self> {
        check_dims("volume", dims, data.len())?;
        Ok(Volume { dims, data, spacing: None, domain })
    }

    pub fn filled(dims: [usize; 3], value: f32, domain: IntensityDomain) -> Self {
        Volume { dims, data: vec![value; dims.iter().product()], spacing: None, domain }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[index(self.dims, x, y, z)]
    }

    /// `1 x X x Y x Z` tensor.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let [x, y, z] = self.dims;
        Tensor::from_vec(self.data.iter().map(|&v| S::of(v as f64)).collect(), &[1, x, y, z]).expect("volume extents")
    }

    /// Inverse of [`Volume::to_tensor`]; accepts `1 x X x Y x Z` or `X x Y x Z`.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>, domain: IntensityDomain) -> Result<Self> {
        let sh = t.shape();
        let dims = match sh {
            [1, x, y, z] | [x, y, z] => [*x, *y, *z],
            _ => return Err(Error::dim("volume", None, format!("expected [1 x] X x Y x Z, got {sh:?}"))),
        };
        Volume::new(dims, t.data().iter().map(|v| v.as_f64() as f32).collect(), domain)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    pub dims: [usize; 3],
    pub data: Vec<u8>,
}

impl MaskVolume {
    pub fn new(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        check_dims("mask", dims, data.len())?;
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::Domain { op: "mask", detail: format!("voxel {i} has value {}, masks are binary", data[i]) });
        }
        Ok(MaskVolume { dims, data })
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        MaskVolume { dims, data: vec![0; dims.iter().product()] }
    }

    /// Thresholds a real-valued grid at 0.5.
    pub fn from_volume(v: &Volume) -> Self {
        MaskVolume { dims: v.dims, data: v.data.iter().map(|&x| u8::from(x >= 0.5)).collect() }
    }

    pub fn to_volume(&self) -> Volume {
        Volume { dims: self.dims, data: self.data.iter().map(|&v| v as f32).collect(), spacing: None, domain: IntensityDomain::Normalized }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[index(self.dims, x, y, z)] == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub component: usize,
}

/// One training sample: target, erased input, tumor mask, and soft boundary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TumorCube {
    pub y: Volume,
    pub x_erased: Volume,
    pub m_st: MaskVolume,
    pub m_sb: Volume,
    pub provenance: Provenance,
}

impl TumorCube {
    pub fn side(&self) -> usize {
        self.y.dims[0]
    }

    /// Checks the structural invariants; returns a description of the first violation.
    pub fn validate(&self) -> Result<()> {
        let d = self.y.dims;
        let bad = |detail: String| Err(Error::Domain { op: "tumor_cube", detail });
        if d[0] != d[1] || d[1] != d[2] {
            return bad(format!("not a cube: {d:?}"));
        }
        if self.x_erased.dims != d || self.m_st.dims != d || self.m_sb.dims != d {
            return bad("component extents differ".into());
        }
        if let Some(i) = self.y.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return bad(format!("target voxel {i} = {} outside [0, 1]", self.y.data[i]));
        }
        for i in 0..self.y.len() {
            if self.m_st.data[i] == 0 && self.x_erased.data[i] != self.y.data[i] {
                return bad(format!("erased input differs from target outside the mask at voxel {i}"));
            }
        }
        if let Some(i) = self.m_sb.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return bad(format!("boundary weight {} at voxel {i} outside [0, 1]", self.m_sb.data[i]));
        }
        Ok(())
    }
}

/// Stacked `N x 1 x S x S x S` tensors for a set of cubes.
#[derive(Debug, Clone)]
pub struct Batch<S: Scalar = f32> {
    pub y: Tensor<S>,
    pub x_erased: Tensor<S>,
    pub m_st: Tensor<S>,
    pub m_sb: Tensor<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_cubes(cubes: &[&TumorCube]) -> Result<Self> {
        let first = cubes.first().ok_or_else(|| Error::arg("batch", "no cubes"))?;
        let d = first.y.dims;
        if let Some(c) = cubes.iter().find(|c| c.y.dims != d) {
            return Err(Error::dim("batch", None, format!("cube extents {:?} vs {d:?}", c.y.dims)));
        }
        let shape = [cubes.len(), 1, d[0], d[1], d[2]];
        let stack = |f: &dyn Fn(&TumorCube) -> Vec<S>| -> Result<Tensor<S>> {
            Tensor::from_vec(cubes.iter().flat_map(|c| f(c)).collect(), &shape)
        };
        let conv = |v: &[f32]| v.iter().map(|&x| S::of(x as f64)).collect::<Vec<S>>();
        Ok(Batch {
            y: stack(&|c| conv(&c.y.data))?,
            x_erased: stack(&|c| conv(&c.x_erased.data))?,
            m_st: stack(&|c| c.m_st.data.iter().map(|&v| S::of(v as f64)).collect())?,
            m_sb: stack(&|c| conv(&c.m_sb.data))?,
        })
    }

    pub fn len(&self) -> usize {
        self.y.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
