use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{index, MaskVolume, TumorCube, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationAxis {
    X,
    Y,
    Z,
}

/// Flips along any subset of axes, then `quarter_turns` rotations by 90
/// degrees about `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augmentation {
    pub flips: [bool; 3],
    pub axis: RotationAxis,
    pub quarter_turns: u8,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation { flips: [false; 3], axis: RotationAxis::Z, quarter_turns: 0 };

    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flips = [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)];
        let axis = [RotationAxis::X, RotationAxis::Y, RotationAxis::Z][rng.random_range(0..3)];
        Augmentation { flips, axis, quarter_turns: rng.random_range(0..4) }
    }

    /// Source coordinate read by output voxel `p` of a cube with side `n`.
    fn source(&self, p: [usize; 3], n: usize) -> [usize; 3] {
        // Undo the rotation, then the flips.
        let (a, b) = match self.axis {
            RotationAxis::X => (1, 2),
            RotationAxis::Y => (2, 0),
            RotationAxis::Z => (0, 1),
        };
        let mut q = p;
        for _ in 0..self.quarter_turns % 4 {
            // Forward turn maps (u, v) -> (n-1-v, u); its inverse maps (u, v) -> (v, n-1-u).
            let (u, v) = (q[a], q[b]);
            q[a] = v;
            q[b] = n - 1 - u;
        }
        for (axis, &f) in self.flips.iter().enumerate() {
            if f {
                q[axis] = n - 1 - q[axis];
            }
        }
        q
    }

    /// The plan that restores the original cube.
    pub fn inverse(&self) -> InversePlan {
        InversePlan(*self)
    }

    fn permutation(&self, n: usize) -> Vec<usize> {
        let dims = [n; 3];
        let mut src = vec![0; n * n * n];
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let q = self.source([x, y, z], n);
                    src[index(dims, x, y, z)] = index(dims, q[0], q[1], q[2]);
                }
            }
        }
        src
    }

    pub fn apply_volume(&self, v: &Volume) -> Volume {
        let src = self.permutation(v.dims[0]);
        Volume { data: src.iter().map(|&i| v.data[i]).collect(), ..v.clone() }
    }

    pub fn apply_mask(&self, m: &MaskVolume) -> MaskVolume {
        let src = self.permutation(m.dims[0]);
        MaskVolume { dims: m.dims, data: src.iter().map(|&i| m.data[i]).collect() }
    }
}

/// Inverse of an [`Augmentation`].
#[derive(Debug, Clone, Copy)]
pub struct InversePlan(Augmentation);

impl InversePlan {
    fn permutation(&self, n: usize) -> Vec<usize> {
        let fwd = self.0.permutation(n);
        let mut inv = vec![0; fwd.len()];
        for (dst, &src) in fwd.iter().enumerate() {
            inv[src] = dst;
        }
        inv
    }

    pub fn apply_volume(&self, v: &Volume) -> Volume {
        let src = self.permutation(v.dims[0]);
        Volume { data: src.iter().map(|&i| v.data[i]).collect(), ..v.clone() }
    }

    pub fn apply_mask(&self, m: &MaskVolume) -> MaskVolume {
        let src = self.permutation(m.dims[0]);
        MaskVolume { dims: m.dims, data: src.iter().map(|&i| m.data[i]).collect() }
    }
}

/// Applies the same transform to every grid of the cube.
pub fn augment(cube: &TumorCube, plan: &Augmentation) -> TumorCube {
    TumorCube {
        y: plan.apply_volume(&cube.y),
        x_erased: plan.apply_volume(&cube.x_erased),
        m_st: plan.apply_mask(&cube.m_st),
        m_sb: plan.apply_volume(&cube.m_sb),
        provenance: cube.provenance.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IntensityDomain;

    fn ramp(n: usize) -> Volume {
        Volume::new([n; 3], (0..n * n * n).map(|i| i as f32).collect(), IntensityDomain::Normalized).unwrap()
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let v = ramp(5);
        for axis in [RotationAxis::X, RotationAxis::Y, RotationAxis::Z] {
            let turn = Augmentation { flips: [false; 3], axis, quarter_turns: 1 };
            let mut w = v.clone();
            for _ in 0..4 {
                w = turn.apply_volume(&w);
            }
            assert_eq!(w, v);
            assert_ne!(turn.apply_volume(&v), v);
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let v = ramp(4);
        let f = Augmentation { flips: [true, false, true], ..Augmentation::IDENTITY };
        assert_eq!(f.apply_volume(&f.apply_volume(&v)), v);
    }

    #[test]
    fn quarter_turn_about_z_moves_x_axis_to_y() {
        let n = 3;
        let v = ramp(n);
        let t = Augmentation { flips: [false; 3], axis: RotationAxis::Z, quarter_turns: 1 }.apply_volume(&v);
        // Forward turn sends (u, v) to (n-1-v, u).
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    assert_eq!(t.at(n - 1 - y, x, z), v.at(x, y, z));
                }
            }
        }
    }

    #[test]
    fn inverse_restores_every_plan() {
        let v = ramp(4);
        for seed in 0..40 {
            let plan = Augmentation::random(seed);
            let w = plan.apply_volume(&v);
            assert_eq!(plan.inverse().apply_volume(&w), v);
            let mut a = w.data.clone();
            a.sort_by(f32::total_cmp);
            let mut b = v.data.clone();
            b.sort_by(f32::total_cmp);
            assert_eq!(a, b);
        }
    }
}
