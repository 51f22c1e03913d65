use proptest::prelude::*;

use frgan::data::{phantom_dataset, Batch, IntensityDomain, MaskVolume, PhantomConfig, TumorCube, Volume};
use frgan::losses::{boundary_loss, multi_mask_loss, LossWeights};
use frgan::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use frgan::nn::{Init, Module};
use frgan::tensor::{concat, Tensor};
use frgan::train::{gamma_ramp, synthesize, train, train_step, TrainConfig, TrainOptions, TrainState};

fn small_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        batch_size: 2,
        epochs: 3,
        gamma_ramp_epochs: 2,
        generator: GeneratorConfig { side: 16, width: 2 },
        discriminator: DiscriminatorConfig { side: 16, widths: [2, 4, 4, 4] },
        ..Default::default()
    };
    cfg.seed = seed;
    cfg
}

fn cubes(n: usize, seed: u64) -> Vec<TumorCube> {
    phantom_dataset(n, seed, &PhantomConfig { side: 16, min_tumor_fraction: 0.02, max_tumor_fraction: 0.12, ..Default::default() }).unwrap()
}

#[test]
fn kaiming_variance_matches_fan_in() {
    let mut init = Init::new(5);
    let w: Tensor<f64> = init.kaiming(&[64, 32, 3, 3, 3]);
    let d = w.data();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d.len() as f64;
    let want = 2.0 / (32.0 * 27.0);
    assert!(mean.abs() < 3e-3, "mean {mean}");
    assert!((var / want - 1.0).abs() < 0.03, "variance {var} vs {want}");
}

#[test]
fn every_generator_parameter_receives_gradient() {
    let mut g = Generator::<f64>::new(GeneratorConfig { side: 16, width: 2 }, 4).unwrap();
    let c = &cubes(1, 2)[0];
    let b = Batch::<f64>::from_cubes(&[c]).unwrap();
    let out = g.forward(&b.x_erased, &b.m_st).unwrap();
    let w = LossWeights::default();
    let cw = frgan::losses::content_loss(&b.y, &out.image).unwrap();
    let st = frgan::losses::tumor_loss(&b.y, &out.image, &b.m_st).unwrap();
    let sb = boundary_loss(&b.y, &out.sides, &Tensor::full(b.y.shape(), 1.0)).unwrap();
    multi_mask_loss(&w, &cw, &st, &sb).unwrap().backward().unwrap();
    let params = g.params_mut();
    assert_eq!(params.len(), 15 * 4 + 4 * 2);
    for p in params {
        let grad = p.tensor.grad_vec().unwrap_or_else(|| panic!("{} has no gradient", p.name));
        assert!(grad.iter().any(|&v| v != 0.0), "{} gradient is all zero", p.name);
        assert!(grad.iter().all(|v| v.is_finite()), "{}", p.name);
    }
}

#[test]
fn discriminator_contracts_to_patches_in_open_unit_interval() {
    let cfg = DiscriminatorConfig { side: 16, widths: [2, 4, 4, 4] };
    let mut d = Discriminator::<f32>::new(cfg, 3).unwrap();
    let cs = cubes(2, 5);
    let refs: Vec<&TumorCube> = cs.iter().collect();
    let b = Batch::<f32>::from_cubes(&refs).unwrap();
    let cond = concat(&[&b.x_erased, &b.m_st], 1).unwrap();
    let (r, f) = d.forward_pair(&cond, &b.y, &b.x_erased, true).unwrap();
    assert_eq!(r.shape(), &[2, 1, 2, 2, 2]);
    assert_eq!(f.shape(), r.shape());
    assert!(r.data().iter().chain(f.data()).all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn optimizers_track_only_their_own_model() {
    let cfg = small_config(9);
    let mut state = TrainState::<f32>::new(&cfg).unwrap();
    let g_shapes: Vec<usize> = state.generator.params_mut().iter().map(|p| p.tensor.numel()).collect();
    let d_shapes: Vec<usize> = state.discriminator.params_mut().iter().map(|p| p.tensor.numel()).collect();
    let cs = cubes(2, 1);
    let refs: Vec<&TumorCube> = cs.iter().collect();
    let b = Batch::from_cubes(&refs).unwrap();
    let fx = frgan::nn::FeatureExtractor::default();
    let d_before = state.adam_d.m.clone();
    train_step(&mut state, &b, &fx, &cfg).unwrap();
    assert_eq!(state.adam_g.m.iter().map(Vec::len).collect::<Vec<_>>(), g_shapes);
    assert_eq!(state.adam_d.m.iter().map(Vec::len).collect::<Vec<_>>(), d_shapes);
    assert_eq!(state.adam_g.t, 1);
    assert_eq!(state.adam_d.t, 1);
    assert_ne!(state.adam_d.m, d_before);
}

#[test]
fn parallel_mode_tracks_serial_losses() {
    let data = cubes(4, 3);
    let serial = train::<f32>(&small_config(2), &data, None, TrainOptions { max_steps: Some(3), ..Default::default() }).unwrap();
    let cfg = TrainConfig { parallel: true, ..small_config(2) };
    let parallel = train::<f32>(&cfg, &data, None, TrainOptions { max_steps: Some(3), ..Default::default() }).unwrap();
    for (a, b) in serial.history.iter().zip(&parallel.history) {
        let rel = (a.losses.l_total - b.losses.l_total).abs() / a.losses.l_total.abs();
        assert!(rel < 1e-4, "step {}: {} vs {}", a.step, a.losses.l_total, b.losses.l_total);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_is_monotone_and_clamped(ramp in 0usize..60, e in 0usize..200) {
        let (g0, g1) = (gamma_ramp(e, ramp), gamma_ramp(e + 1, ramp));
        prop_assert!((0.0..=1.0).contains(&g0));
        prop_assert!(g1 >= g0);
        if e >= ramp {
            prop_assert_eq!(g0, 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthesis_only_touches_the_mask(
        origin in (0usize..14, 0usize..14, 0usize..8),
        extent in (1usize..5, 1usize..5, 1usize..4),
        seed in 0u64..100,
    ) {
        let dims = [18, 18, 12];
        let n: usize = dims.iter().product();
        let v = Volume::new(dims, (0..n).map(|i| ((i as u64 * 7919 + seed) % 1000) as f32 / 1000.0).collect(), IntensityDomain::Normalized).unwrap();
        let mut m = MaskVolume::empty(dims);
        for x in origin.0..(origin.0 + extent.0).min(dims[0]) {
            for y in origin.1..(origin.1 + extent.1).min(dims[1]) {
                for z in origin.2..(origin.2 + extent.2).min(dims[2]) {
                    m.data[(x * dims[1] + y) * dims[2] + z] = 1;
                }
            }
        }
        let g = Generator::<f32>::new(GeneratorConfig { side: 16, width: 2 }, seed).unwrap();
        let once = synthesize(&g, &v, &m, 4).unwrap();
        let twice = synthesize(&g, &once, &m, 4).unwrap();
        for i in 0..n {
            if m.data[i] == 0 {
                prop_assert_eq!(once.data[i].to_bits(), v.data[i].to_bits());
                prop_assert_eq!(twice.data[i].to_bits(), v.data[i].to_bits());
            } else {
                prop_assert!((0.0..=1.0).contains(&once.data[i]));
            }
        }
    }
}
