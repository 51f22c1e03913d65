//! Adversarial training: Adam, the boundary-weight ramp, the alternating
//! discriminator/generator step, and the epoch loop with checkpoints.

mod adam;
mod synth;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamConfig};
pub use synth::{composite_cube, synthesize, synthesize_cube};

use crate::data::{augment, Augmentation, Batch, TumorCube};
use crate::error::{Error, Result};
use crate::losses::{discriminator_loss, generator_terms, hybrid_loss, LossReport, LossWeights};
use crate::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::nn::{FeatureExtractor, Module};
use crate::tensor::{concat, set_parallel, Scalar, Tensor};

/// Epochs over which the boundary weight rises from 0 to 1.
pub const GAMMA_RAMP_EPOCHS: usize = 30;

/// `min(epoch / ramp, 1)`, evaluated at epoch boundaries.
pub fn gamma_ramp(epoch: usize, ramp_epochs: usize) -> f64 {
    if ramp_epochs == 0 {
        return 1.0;
    }
    (epoch as f64 / ramp_epochs as f64).min(1.0)
}

pub fn gamma_schedule(epoch: usize) -> f64 {
    gamma_ramp(epoch, GAMMA_RAMP_EPOCHS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Discriminator step size; `learning_rate` when unset.
    pub d_learning_rate: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub gamma_ramp_epochs: usize,
    /// Set from the run-level seed rather than the `[train]` table.
    #[serde(skip)]
    pub seed: u64,
    /// Split convolution work across batch items. Off means bit-reproducible serial execution.
    pub parallel: bool,
    pub d_steps_per_g: usize,
    /// Random flips and quarter turns per sample and epoch.
    pub augment: bool,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            d_learning_rate: None,
            batch_size: 4,
            epochs: 100,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            gamma_ramp_epochs: GAMMA_RAMP_EPOCHS,
            seed: 0,
            parallel: false,
            d_steps_per_g: 1,
            augment: true,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if let Some(lr) = self.d_learning_rate.filter(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return bad(format!("d_learning_rate must be positive, got {lr}"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.d_steps_per_g == 0 {
            return bad("batch_size, epochs, and d_steps_per_g must be positive".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(format!("invalid Adam settings {a:?}"));
        }
        if self.gamma_ramp_epochs > self.epochs {
            return bad(format!("gamma ramp of {} epochs exceeds the {} training epochs", self.gamma_ramp_epochs, self.epochs));
        }
        if self.generator.side != self.discriminator.side {
            return bad(format!("generator side {} vs discriminator side {}", self.generator.side, self.discriminator.side));
        }
        self.weights.validate()?;
        self.generator.validate()
    }

    pub fn generator_seed(&self) -> u64 {
        mix(self.seed, 1)
    }

    pub fn discriminator_seed(&self) -> u64 {
        mix(self.seed, 2)
    }
}

/// SplitMix64 finalizer over a combined key.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One line of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: u64,
    pub epoch: usize,
    pub gamma: f64,
    pub l_d: f64,
    /// Mean discriminator output on real and generated pairs.
    pub d_real: f64,
    pub d_fake: f64,
    /// Extremes over both maps.
    pub d_min: f64,
    pub d_max: f64,
    #[serde(flatten)]
    pub losses: LossReport,
}

#[derive(Debug, Clone)]
pub struct TrainState<S: Scalar = f32> {
    pub step: u64,
    pub epoch: usize,
    pub generator: Generator<S>,
    pub discriminator: Discriminator<S>,
    pub adam_g: Adam<S>,
    pub adam_d: Adam<S>,
    pub history: Vec<HistoryRecord>,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut generator = Generator::new(cfg.generator, cfg.generator_seed())?;
        let mut discriminator = Discriminator::new(cfg.discriminator, cfg.discriminator_seed())?;
        let adam_g = Adam::new(cfg.adam, cfg.learning_rate, &mut generator);
        let adam_d = Adam::new(cfg.adam, cfg.d_learning_rate.unwrap_or(cfg.learning_rate), &mut discriminator);
        Ok(TrainState { step: 0, epoch: 0, generator, discriminator, adam_g, adam_d, history: Vec::new() })
    }
}

fn stats<S: Scalar>(t: &Tensor<S>) -> (f64, f64, f64) {
    let d = t.data();
    let mean = d.iter().map(|v| v.as_f64()).sum::<f64>() / d.len() as f64;
    let lo = d.iter().map(|v| v.as_f64()).fold(f64::INFINITY, f64::min);
    let hi = d.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    (mean, lo, hi)
}

fn diverged(state: &TrainState<impl Scalar>, what: &str) -> Error {
    let last = state.history.last().map(|r| serde_json::to_string(r).unwrap_or_default()).unwrap_or_else(|| "none".into());
    Error::Diverged { step: state.step, reason: what.to_string(), last_report: last }
}

/// One discriminator update on (real, generated) pairs followed by one
/// generator update on the hybrid objective.
pub fn train_step<S: Scalar>(state: &mut TrainState<S>, batch: &Batch<S>, fx: &FeatureExtractor<S>, cfg: &TrainConfig) -> Result<HistoryRecord> {
    if batch.is_empty() {
        return Err(Error::arg("train_step", "empty batch"));
    }
    let gamma = gamma_ramp(state.epoch, cfg.gamma_ramp_epochs);
    let weights = cfg.weights.with_gamma(gamma);
    let out = state.generator.forward(&batch.x_erased, &batch.m_st)?;
    let condition = concat(&[&batch.x_erased, &batch.m_st], 1)?;

    let fake = out.image.detach();
    let mut l_d = 0.0;
    let (mut d_real, mut d_fake, mut d_min, mut d_max) = (0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..cfg.d_steps_per_g {
        state.discriminator.zero_grad();
        let (p_real, p_fake) = state.discriminator.forward_pair(&condition, &batch.y, &fake, true)?;
        let loss = discriminator_loss(&p_real, &p_fake)?;
        l_d = loss.item().as_f64();
        if !l_d.is_finite() {
            return Err(diverged(state, "discriminator loss is not finite"));
        }
        loss.backward()?;
        state.adam_d.step(&mut state.discriminator)?;
        let (r, rlo, rhi) = stats(&p_real);
        let (f, flo, fhi) = stats(&p_fake);
        (d_real, d_fake, d_min, d_max) = (r, f, rlo.min(flo), rhi.max(fhi));
    }

    state.generator.zero_grad();
    let (_, p_gen) = state.discriminator.forward_pair(&condition, &batch.y, &out.image, true)?;
    let terms = generator_terms(fx, &batch.y, &out, &batch.m_st, &batch.m_sb, &p_gen)?;
    let (total, report) = hybrid_loss(&weights, &terms)?;
    if !report.is_finite() {
        return Err(diverged(state, "generator loss is not finite"));
    }
    total.backward()?;
    state.adam_g.step(&mut state.generator)?;

    state.step += 1;
    let record = HistoryRecord { step: state.step, epoch: state.epoch, gamma, l_d, d_real, d_fake, d_min, d_max, losses: report };
    state.history.push(record);
    Ok(record)
}

/// Sample order for one epoch; depends only on `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5A));
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Writes `epoch-NNNN` checkpoints here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stops after this many total steps, possibly mid-epoch.
    pub max_steps: Option<u64>,
    /// Stops once this many epochs are complete.
    pub stop_after_epoch: Option<usize>,
    pub on_step: Option<&'a mut dyn FnMut(&HistoryRecord)>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}")
}

/// Runs (or resumes) training until `cfg.epochs` are complete.
pub fn train<S: Scalar>(cfg: &TrainConfig, dataset: &[TumorCube], resume: Option<TrainState<S>>, mut opts: TrainOptions<'_>) -> Result<TrainState<S>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::arg("train", "dataset is empty"));
    }
    let side = cfg.generator.side;
    if let Some(c) = dataset.iter().find(|c| c.side() != side) {
        return Err(Error::dim("train", None, format!("cube side {} does not match the configured side {side}", c.side())));
    }
    set_parallel(cfg.parallel);
    let fx = FeatureExtractor::<S>::default();
    let mut state = match resume {
        Some(s) => s,
        None => TrainState::new(cfg)?,
    };
    while state.epoch < cfg.epochs {
        if opts.stop_after_epoch.is_some_and(|e| state.epoch >= e) {
            break;
        }
        let order = epoch_order(dataset.len(), cfg.seed, state.epoch);
        for chunk in order.chunks(cfg.batch_size) {
            if opts.max_steps.is_some_and(|m| state.step >= m) {
                return Ok(state);
            }
            let cubes: Vec<TumorCube> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(&dataset[i], &Augmentation::random(mix(mix(cfg.seed, state.epoch as u64), i as u64)))
                    } else {
                        dataset[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&TumorCube> = cubes.iter().collect();
            let batch = Batch::from_cubes(&refs)?;
            let record = train_step(&mut state, &batch, &fx, cfg)?;
            if let Some(cb) = opts.on_step.as_mut() {
                cb(&record);
            }
        }
        state.epoch += 1;
        if let Some(dir) = &opts.checkpoint_dir {
            crate::io::save_checkpoint(&dir.join(checkpoint_name(state.epoch)), &mut state, cfg)?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{phantom_dataset, PhantomConfig};

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            epochs: 4,
            gamma_ramp_epochs: 2,
            seed: 5,
            generator: GeneratorConfig { side: 8, width: 2 },
            discriminator: DiscriminatorConfig { side: 8, widths: [2, 2, 2, 2] },
            ..Default::default()
        }
    }

    fn tiny_data(n: usize) -> Vec<TumorCube> {
        phantom_dataset(n, 1, &PhantomConfig { side: 8, min_tumor_fraction: 0.02, max_tumor_fraction: 0.2, ..Default::default() }).unwrap()
    }

    #[test]
    fn gamma_reference_points() {
        assert_eq!(gamma_schedule(0), 0.0);
        assert_eq!(gamma_schedule(15), 0.5);
        assert_eq!(gamma_schedule(30), 1.0);
        assert_eq!(gamma_schedule(99), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { gamma_ramp_epochs: 200, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { d_learning_rate: Some(-1e-4), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn one_step_moves_every_parameter_tensor() {
        let cfg = tiny_config();
        let data = tiny_data(2);
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        // past epoch 0 so the boundary term, and with it the side branch, has weight
        state.epoch = 1;
        let before_g = state.generator.param_values();
        let before_d = state.discriminator.param_values();
        let batch = Batch::from_cubes(&data.iter().collect::<Vec<_>>()).unwrap();
        let rec = train_step(&mut state, &batch, &FeatureExtractor::default(), &cfg).unwrap();
        assert!(rec.losses.is_finite());
        assert!(rec.d_min > 0.0 && rec.d_max < 1.0);
        for (a, b) in before_g.iter().zip(state.generator.param_values()) {
            assert_ne!(*a, b);
        }
        for (a, b) in before_d.iter().zip(state.discriminator.param_values()) {
            assert_ne!(*a, b);
        }
        assert_eq!(state.adam_g.t, 1);
        assert_eq!(state.adam_d.t, 1);
    }

    #[test]
    fn shuffles_depend_on_seed_and_epoch_only() {
        assert_eq!(epoch_order(10, 3, 4), epoch_order(10, 3, 4));
        assert_ne!(epoch_order(10, 3, 4), epoch_order(10, 3, 5));
        let mut o = epoch_order(10, 3, 4);
        o.sort();
        assert_eq!(o, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn identical_runs_match_bitwise() {
        let cfg = tiny_config();
        let data = tiny_data(3);
        let mut a = train::<f32>(&cfg, &data, None, TrainOptions::default()).unwrap();
        let mut b = train::<f32>(&cfg, &data, None, TrainOptions::default()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.generator.param_values(), b.generator.param_values());
        assert_eq!(a.adam_d, b.adam_d);
        assert_eq!(a.step, 8);
    }

    #[test]
    fn frozen_generator_discriminator_separates_toy_data() {
        // Real pairs carry the target; generated pairs carry the fixed
        // output of an untrained generator.
        let cfg = TrainConfig { learning_rate: 1e-3, ..tiny_config() };
        let data = tiny_data(4);
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        let batch = Batch::<f32>::from_cubes(&data.iter().collect::<Vec<_>>()).unwrap();
        let fake = state.generator.forward(&batch.x_erased, &batch.m_st).unwrap().image.detach();
        let cond = concat(&[&batch.x_erased, &batch.m_st], 1).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            state.discriminator.zero_grad();
            let (p_real, p_fake) = state.discriminator.forward_pair(&cond, &batch.y, &fake, true).unwrap();
            let loss = discriminator_loss(&p_real, &p_fake).unwrap();
            last = loss.item() as f64;
            loss.backward().unwrap();
            state.adam_d.step(&mut state.discriminator).unwrap();
        }
        assert!(last < std::f64::consts::LN_2, "{last}");
    }
}
