//! Generator and discriminator assembly.

mod discriminator;
mod generator;

use serde::{Deserialize, Serialize};

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig, GeneratorOutput, GATED_NAMES, SIDE_OUTPUTS};

/// Per-item output shape of one named layer, `[C, X, Y, Z]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub shape: [usize; 4],
}

pub type Trace = Vec<LayerShape>;

/// FNV-1a over the textual shape table; stored in checkpoint manifests so a
/// checkpoint is never loaded into a differently shaped model.
pub fn shape_table_hash(table: &[LayerShape]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for row in table {
        for b in format!("{}:{:?};", row.name, row.shape).bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Module;
    use crate::tensor::Tensor;

    fn small() -> GeneratorConfig {
        GeneratorConfig { side: 16, width: 2 }
    }

    #[test]
    fn traced_shapes_follow_the_table() {
        let g = Generator::<f32>::new(small(), 1).unwrap();
        let x = Tensor::zeros(&[1, 16, 16, 16]);
        let mut trace = Trace::new();
        let out = g.forward_traced(&x, &x, Some(&mut trace)).unwrap();
        let mut want = small().shape_table();
        want.sort_by(|a, b| a.name.cmp(&b.name));
        trace.sort_by(|a, b| a.name.cmp(&b.name));
        assert_eq!(trace, want);
        assert_eq!(out.image.shape(), &[1, 16, 16, 16]);
        assert!(out.sides.iter().all(|s| s.shape() == [1, 16, 16, 16]));
    }

    #[test]
    fn zero_input_gives_finite_output() {
        let g = Generator::<f32>::new(small(), 2).unwrap();
        let z = Tensor::zeros(&[2, 1, 16, 16, 16]);
        let out = g.forward(&z, &z).unwrap();
        assert_eq!(out.image.shape(), &[2, 1, 16, 16, 16]);
        assert!(out.image.data().iter().all(|v| v.is_finite()));
        assert!(out.sides.iter().all(|s| s.data().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn wrong_extent_is_rejected() {
        let g = Generator::<f32>::new(small(), 3).unwrap();
        let z = Tensor::zeros(&[1, 16, 16, 8]);
        assert!(matches!(g.forward(&z, &z), Err(crate::Error::Dimension { axis: Some(3), .. })));
    }

    #[test]
    fn seeds_control_initialization() {
        let mut a = Generator::<f32>::new(small(), 7).unwrap();
        let mut b = Generator::<f32>::new(small(), 7).unwrap();
        let mut c = Generator::<f32>::new(small(), 8).unwrap();
        assert_eq!(a.param_values(), b.param_values());
        assert_ne!(a.param_values(), c.param_values());
    }

    #[test]
    fn discriminator_patch_map() {
        let cfg = DiscriminatorConfig { side: 32, widths: [2, 2, 2, 2] };
        assert_eq!(cfg.patch_extent(), 4);
        assert_eq!(DiscriminatorConfig::default().patch_extent(), 8);
        let mut d = Discriminator::<f64>::new(cfg, 1).unwrap();
        let mut d2 = Discriminator::<f64>::new(cfg, 1).unwrap();
        let c = Tensor::full(&[2, 2, 32, 32, 32], 0.3);
        let x = Tensor::from_vec((0..2 * 32 * 32 * 32).map(|i| (i % 7) as f64 / 7.0).collect(), &[2, 1, 32, 32, 32]).unwrap();
        let p = d.forward(&c, &x, true).unwrap();
        assert_eq!(p.shape(), &[2, 1, 4, 4, 4]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(p.data(), d2.forward(&c, &x, true).unwrap().data());
        assert!(d.forward(&c, &Tensor::zeros(&[2, 1, 32, 32, 16]), true).is_err());
    }

    #[test]
    fn reference_parameter_count() {
        let mut g = Generator::<f32>::new(GeneratorConfig::default(), 0).unwrap();
        assert_eq!(g.param_count(), 29_875_657);
        let names: Vec<String> = g.params_mut().into_iter().map(|p| p.name).collect();
        assert_eq!(names[0], "gconv1.gate.weight");
        assert_eq!(names.last().unwrap(), "conv4.bias");
    }
}
