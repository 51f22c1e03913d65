//! Central finite-difference audit of analytic gradients.
//!
//! The numeric side only ever evaluates forward passes with gradient
//! recording disabled, so it shares no code path with `backward`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates probed per input; inputs with fewer elements are probed exhaustively.
    pub max_probes: usize,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            max_probes: 48,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over all probes.
    pub max_rel_error: f64,
    pub probes: usize,
}

/// Compares the tape gradient of `f` at `inputs` against central differences.
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().requires_grad()).collect();
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        return Err(Error::arg("gradcheck", format!("{name}: function must return one value")));
    }
    loss.backward()?;
    drop(loss);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = 0.0f64;
    let mut probes = 0;
    let _guard = no_grad();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad_vec().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let n = leaf.numel();
        let coords: Vec<usize> = if n <= cfg.max_probes {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, cfg.max_probes).into_vec();
            v.sort_unstable();
            v
        };
        for j in coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = leaf.to_vec();
                data[j] += delta;
                let mut args: Vec<Tensor<f64>> = leaves.iter().map(Tensor::detach).collect();
                args[i] = Tensor::from_vec(data, leaf.shape())?;
                Ok(f(&args)?.item())
            };
            let numeric = (eval(cfg.step)? - eval(-cfg.step)?) / (2.0 * cfg.step);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            worst = worst.max(rel);
            probes += 1;
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: worst,
        probes,
    })
}

/// Relative-error bound every audit entry must meet.
pub const AUDIT_TOLERANCE: f64 = 1e-3;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape)
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect(), shape)
}

/// `y + d` with `|d|` in `[0.05, 0.3]` and random sign, so L1 terms stay
/// away from their kink.
fn offset(rng: &mut ChaCha8Rng, y: &Tensor<f64>) -> Result<Tensor<f64>> {
    let d: Vec<f64> = y
        .data()
        .iter()
        .map(|&v| {
            let m = rng.random_range(0.05..0.3);
            if rng.random_bool(0.5) { v + m } else { v - m }
        })
        .collect();
    Tensor::from_vec(d, y.shape())
}

/// Fixed random projection that reduces a tensor to a scalar.
fn project(t: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(&mut rng, t.shape(), -1.0, 1.0)?;
    t.mul(&w)?.sum()
}

/// Finite-difference audit of every differentiable building block: the
/// convolution geometries the models use, gated and dilated-gated
/// convolution, batch normalization, trilinear upsampling, all eight loss
/// functions, and the whole generator at a 16³ geometry.
pub fn audit(seed: u64) -> Result<Vec<GradCheckReport>> {
    use crate::losses::*;
    use crate::model::{Generator, GeneratorConfig};
    use crate::nn::{BatchNormLayer, FeatureExtractor, GatedConvLayer, Init};
    use crate::tensor::{conv2d, conv3d, ConvGeometry};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GradCheckConfig { step: 1e-6, seed, ..Default::default() };
    let mut out = Vec::new();

    let conv_cases: [(&str, usize, ConvGeometry); 6] = [
        ("conv3d k3 s1 p1", 3, ConvGeometry::same(3, 1)),
        ("conv3d k3 s2 p1", 3, ConvGeometry::new(2, 1, 1)),
        ("conv3d k3 d2 p2", 3, ConvGeometry::same(3, 2)),
        ("conv3d k3 d4 p4", 3, ConvGeometry::same(3, 4)),
        ("conv3d k1 pointwise", 1, ConvGeometry::new(1, 0, 1)),
        ("conv3d k3 s1 p0", 3, ConvGeometry::new(1, 0, 1)),
    ];
    for (name, k, g) in conv_cases {
        let x = uniform(&mut rng, &[2, 2, 6, 6, 6], -1.0, 1.0)?;
        let w = uniform(&mut rng, &[3, 2, k, k, k], -0.5, 0.5)?;
        let b = uniform(&mut rng, &[3], -0.5, 0.5)?;
        let s = rng.random();
        out.push(check(name, &[x, w, b], |a| project(&conv3d(&a[0], &a[1], Some(&a[2]), g)?, s), &cfg)?);
    }
    {
        let x = uniform(&mut rng, &[2, 1, 7, 6], -1.0, 1.0)?;
        let w = uniform(&mut rng, &[3, 1, 3, 3], -0.5, 0.5)?;
        let s = rng.random();
        out.push(check("conv2d k3 s2 p1", &[x, w], |a| project(&conv2d(&a[0], &a[1], None, ConvGeometry::new(2, 1, 1))?, s), &cfg)?);
    }

    for (name, dilation) in [("gated conv", 1), ("dilated gated conv", 2)] {
        let layer = GatedConvLayer::<f64>::new(&mut Init::new(rng.random()), 2, 2, 3, ConvGeometry::same(3, dilation));
        let x = uniform(&mut rng, &[1, 2, 5, 5, 5], -1.0, 1.0)?;
        let s = rng.random();
        let inputs = [x, layer.gate_weight.clone(), layer.gate_bias.clone(), layer.feature_weight.clone(), layer.feature_bias.clone()];
        out.push(check(
            name,
            &inputs,
            |a| {
                let mut l = layer.clone();
                (l.gate_weight, l.gate_bias, l.feature_weight, l.feature_bias) = (a[1].clone(), a[2].clone(), a[3].clone(), a[4].clone());
                project(&l.forward(&a[0])?, s)
            },
            &cfg,
        )?);
    }

    {
        let bn = BatchNormLayer::<f64>::new(&mut Init::new(0), 3);
        let x = uniform(&mut rng, &[3, 3, 2, 2, 2], -1.0, 1.0)?;
        let scale = uniform(&mut rng, &[3], 0.5, 1.5)?;
        let shift = uniform(&mut rng, &[3], -0.5, 0.5)?;
        let s = rng.random();
        out.push(check(
            "batch norm",
            &[x, scale, shift],
            |a| {
                let mut l = bn.clone();
                (l.scale, l.shift) = (a[1].clone(), a[2].clone());
                project(&l.forward(&a[0], true)?, s)
            },
            &cfg,
        )?);
    }

    for factor in [2, 4] {
        let x = uniform(&mut rng, &[1, 2, 3, 3, 3], -1.0, 1.0)?;
        let s = rng.random();
        out.push(check(&format!("trilinear upsample x{factor}"), &[x], |a| project(&a[0].upsample_trilinear(factor)?, s), &cfg)?);
    }

    let shape = [2, 1, 8, 8, 8];
    let y = uniform(&mut rng, &shape, 0.0, 1.0)?;
    let y_hat = offset(&mut rng, &y)?;
    let m_st = binary(&mut rng, &shape, 0.3)?;
    let m_sb = uniform(&mut rng, &shape, 0.0, 1.0)?;
    let d_real = uniform(&mut rng, &[2, 1, 2, 2, 2], 0.05, 0.95)?;
    let d_fake = uniform(&mut rng, &[2, 1, 2, 2, 2], 0.05, 0.95)?;
    let sides: Vec<Tensor<f64>> = (0..4).map(|_| offset(&mut rng, &y)).collect::<Result<_>>()?;
    let fx = FeatureExtractor::<f64>::default();
    let w = LossWeights { gamma: 0.5, ..LossWeights::default() };

    out.push(check("adversarial loss", &[d_real.clone(), d_fake.clone()], |a| discriminator_loss(&a[0], &a[1])?.add(&generator_adversarial_loss(&a[1])?), &cfg)?);
    out.push(check("content loss", &[y.clone(), y_hat.clone()], |a| content_loss(&a[0], &a[1]), &cfg)?);
    out.push(check("tumor loss", &[y.clone(), y_hat.clone(), m_st.clone()], |a| tumor_loss(&a[0], &a[1], &a[2]), &cfg)?);
    let mut bl_inputs = vec![y.clone(), m_sb.clone()];
    bl_inputs.extend(sides.iter().cloned());
    out.push(check("boundary loss", &bl_inputs, |a| boundary_loss(&a[0], &a[2..6], &a[1]), &cfg)?);
    let parts: Vec<Tensor<f64>> = (0..3).map(|_| uniform(&mut rng, &[], 0.1, 2.0)).collect::<Result<_>>()?;
    out.push(check("multi-mask loss", &parts, |a| multi_mask_loss(&w, &a[0], &a[1], &a[2]), &cfg)?);
    out.push(check("perceptual loss", &[y.clone(), y_hat.clone()], |a| perceptual_loss(&fx, &a[0], &a[1]), &cfg)?);
    out.push(check("style loss", &[y.clone(), y_hat.clone()], |a| style_loss(&fx, &a[0], &a[1]), &cfg)?);
    let mut h_inputs = vec![y.clone(), y_hat.clone(), m_st.clone(), m_sb.clone(), d_fake.clone()];
    h_inputs.extend(sides.iter().cloned());
    out.push(check(
        "hybrid loss",
        &h_inputs,
        |a| {
            let terms = LossTerms {
                adv: generator_adversarial_loss(&a[4])?,
                cw: content_loss(&a[0], &a[1])?,
                st: tumor_loss(&a[0], &a[1], &a[2])?,
                sb: boundary_loss(&a[0], &a[5..9], &a[3])?,
                percep: perceptual_loss(&fx, &a[0], &a[1])?,
                sty: style_loss(&fx, &a[0], &a[1])?,
            };
            Ok(hybrid_loss(&w, &terms)?.0)
        },
        &cfg,
    )?);

    let gen = Generator::<f64>::new(GeneratorConfig { side: 16, width: 2 }, rng.random())?;
    let gshape = [1, 1, 16, 16, 16];
    let x = uniform(&mut rng, &gshape, 0.0, 1.0)?;
    let m = binary(&mut rng, &gshape, 0.2)?;
    let s = rng.random();
    // A wider step crosses leaky-ReLU kinks across the whole volume, so the
    // step stays small and the floor rises to the ~1e-8 rounding noise the
    // deep forward leaves in each difference quotient.
    let cfg = GradCheckConfig { floor: 1e-4, ..cfg };
    let full = |g: &Generator<f64>, x: &Tensor<f64>, m: &Tensor<f64>| -> Result<Tensor<f64>> {
        let o = g.forward(x, m)?;
        let mut t = project(&o.image, s)?;
        for (i, side) in o.sides.iter().enumerate() {
            t = t.add(&project(side, s.wrapping_add(i as u64 + 1))?)?;
        }
        Ok(t)
    };
    out.push(check("generator 16^3 (inputs)", &[x.clone(), m.clone()], |a| full(&gen, &a[0], &a[1]), &cfg)?);
    // first, dilated, decoder, and output layers plus one branch projection
    let picks = [0usize, 7, 10, 14];
    let mut p_inputs: Vec<Tensor<f64>> = picks.iter().map(|&i| gen.gated[i].feature_weight.clone()).collect();
    p_inputs.push(gen.branch[3].weight.clone());
    out.push(check(
        "generator 16^3 (parameters)",
        &p_inputs,
        |a| {
            let mut g = gen.clone();
            for (k, &i) in picks.iter().enumerate() {
                g.gated[i].feature_weight = a[k].clone();
            }
            g.branch[3].weight = a[4].clone();
            full(&g, &x, &m)
        },
        &cfg,
    )?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_passes_for_two_seeds() {
        for seed in [0, 7] {
            for r in audit(seed).unwrap() {
                assert!(r.max_rel_error < AUDIT_TOLERANCE, "seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // a deliberately mis-specified op: forward x^2, backward via x^3
        let x = Tensor::from_vec(vec![0.7f64, -1.3], &[2]).unwrap();
        let r = check("cube", &[x], |a| a[0].mul(&a[0])?.mul(&a[0])?.sum(), &GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error < 1e-6);
        let bad = check("wrong", &[Tensor::from_vec(vec![0.7f64], &[1]).unwrap()], |a| {
            let d = a[0].detach();
            a[0].mul(&d)?.sum()
        }, &GradCheckConfig::default())
        .unwrap();
        assert!(bad.max_rel_error > 0.4);
    }
}
