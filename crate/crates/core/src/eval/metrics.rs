use serde::{Deserialize, Serialize};

use crate::data::MaskVolume;
use crate::error::{Error, Result};

/// Overlap and distance scores for one prediction/reference pair.
///
/// `rvd` is `None` when the reference is empty. `hd` is `None` when exactly
/// one of the two masks is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub jaccard: f64,
    pub voe: f64,
    pub rvd: Option<f64>,
    pub hd: Option<f64>,
    pub pred_voxels: usize,
    pub ref_voxels: usize,
}

pub fn compute_metrics(pred: &MaskVolume, reference: &MaskVolume) -> Result<MetricsReport> {
    if pred.dims != reference.dims {
        return Err(Error::dim("compute_metrics", None, format!("prediction {:?} vs reference {:?}", pred.dims, reference.dims)));
    }
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &r) in pred.data.iter().zip(&reference.data) {
        a += p as usize;
        b += r as usize;
        both += (p & r) as usize;
    }
    let union = a + b - both;
    let (dice, jaccard) = if union == 0 { (1.0, 1.0) } else { (2.0 * both as f64 / (a + b) as f64, both as f64 / union as f64) };
    let rvd = (b > 0).then(|| (a as f64 - b as f64) / b as f64);
    let hd = match (a, b) {
        (0, 0) => Some(0.0),
        (0, _) | (_, 0) => None,
        _ => Some(hausdorff(pred, reference)),
    };
    Ok(MetricsReport { dice, jaccard, voe: 1.0 - jaccard, rvd, hd, pred_voxels: a, ref_voxels: b })
}

/// Voxels of `m` with at least one face neighbour outside `m`; the region
/// beyond the grid counts as outside.
pub fn surface(m: &MaskVolume) -> MaskVolume {
    let [nx, ny, nz] = m.dims;
    let mut out = MaskVolume::empty(m.dims);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                if !m.at(x, y, z) {
                    continue;
                }
                let edge = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                let open = edge
                    || !m.at(x - 1, y, z)
                    || !m.at(x + 1, y, z)
                    || !m.at(x, y - 1, z)
                    || !m.at(x, y + 1, z)
                    || !m.at(x, y, z - 1)
                    || !m.at(x, y, z + 1);
                if open {
                    out.data[(x * ny + y) * nz + z] = 1;
                }
            }
        }
    }
    out
}

/// 1D lower envelope of parabolas over `f`, in place. Infinite entries are
/// ignored; an all-infinite line stays infinite.
fn edt_line(f: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&p) = v.last() else { break };
            let pf = p as f64;
            let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= *z.last().expect("paired with v") {
                v.pop();
                z.pop();
            } else {
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        }
        v.push(q);
    }
    if v.is_empty() {
        return;
    }
    out.clear();
    let mut k = 0;
    for q in 0..f.len() {
        let qf = q as f64;
        while k + 1 < v.len() && z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        out.push(d * d + f[v[k]]);
    }
    f.copy_from_slice(out);
}

/// Exact squared Euclidean distance from every voxel to the nearest set
/// voxel of `m`, in voxel units. Infinite everywhere if `m` is empty.
pub fn squared_distance_transform(m: &MaskVolume) -> Vec<f64> {
    let [_, ny, nz] = m.dims;
    let mut d: Vec<f64> = m.data.iter().map(|&v| if v == 1 { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut z, mut out) = (Vec::new(), Vec::new(), Vec::new());
    let mut line = Vec::new();
    let strides = [ny * nz, nz, 1];
    for axis in 0..3 {
        let len = m.dims[axis];
        let stride = strides[axis];
        for base in 0..d.len() {
            // visit each line once, from its first voxel
            let coord = (base / stride) % len;
            if coord != 0 {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|i| d[base + i * stride]));
            edt_line(&mut line, &mut v, &mut z, &mut out);
            for (i, &val) in line.iter().enumerate() {
                d[base + i * stride] = val;
            }
        }
    }
    d
}

/// Symmetric Hausdorff distance between the surfaces of two nonempty masks.
pub fn hausdorff(a: &MaskVolume, b: &MaskVolume) -> f64 {
    let (sa, sb) = (surface(a), surface(b));
    let directed = |from: &MaskVolume, dt: &[f64]| from.data.iter().zip(dt).filter(|(&m, _)| m == 1).map(|(_, &d)| d).fold(0.0, f64::max);
    let h_ab = directed(&sa, &squared_distance_transform(&sb));
    let h_ba = directed(&sb, &squared_distance_transform(&sa));
    h_ab.max(h_ba).sqrt()
}
