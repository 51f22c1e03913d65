use proptest::prelude::*;

use frgan::data::{dilate, MaskVolume};
use frgan::eval::compute_metrics;
use frgan::losses::{
    boundary_loss, content_loss, discriminator_loss, generator_adversarial_loss, gram, hybrid_loss, multi_mask_loss, perceptual_loss,
    style_loss, tumor_loss, LossTerms, LossWeights,
};
use frgan::nn::FeatureExtractor;
use frgan::tensor::Tensor;

fn vol(data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(data, &[1, 1, 4, 4, 4]).unwrap()
}

fn unit(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n)
}

fn mask_strategy(n: usize) -> impl Strategy<Value = MaskVolume> {
    prop::collection::vec(prop::bool::weighted(0.3), n * n * n).prop_map(move |v| MaskVolume::new([n; 3], v.into_iter().map(u8::from).collect()).unwrap())
}

fn weights() -> impl Strategy<Value = LossWeights> {
    (0.0f64..5.0, 0.0f64..20.0, 0.0f64..1.0, 0.0f64..3.0, 0.0f64..3.0, 0.0f64..200.0)
        .prop_map(|(alpha, beta, gamma, lambda, delta, eta)| LossWeights { alpha, beta, gamma, lambda, delta, eta })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_loss_is_nonnegative(y in unit(64), h in unit(64), m in unit(64), s in unit(64), p in prop::collection::vec(0.01f64..0.99, 8)) {
        let fx = FeatureExtractor::<f64>::default();
        let (y, h, m) = (vol(y), vol(h), vol(m));
        let sides: Vec<_> = (0..4).map(|k| vol(s.iter().map(|v| (v + 0.1 * k as f64) % 1.0).collect())).collect();
        let d = Tensor::from_vec(p, &[1, 1, 2, 2, 2]).unwrap();
        let vals = [
            generator_adversarial_loss(&d).unwrap().item(),
            discriminator_loss(&d, &d).unwrap().item(),
            content_loss(&y, &h).unwrap().item(),
            tumor_loss(&y, &h, &m).unwrap().item(),
            boundary_loss(&y, &sides, &m).unwrap().item(),
            perceptual_loss(&fx, &y, &h).unwrap().item(),
            style_loss(&fx, &y, &h).unwrap().item(),
        ];
        prop_assert!(vals.iter().all(|v| *v >= 0.0 && v.is_finite()), "{vals:?}");
        prop_assert_eq!(perceptual_loss(&fx, &y, &y).unwrap().item(), 0.0);
        prop_assert_eq!(style_loss(&fx, &h, &h).unwrap().item(), 0.0);
    }

    #[test]
    fn weighted_sums_are_linear(w in weights(), a in unit(6), b in unit(6), k in 0.0f64..4.0) {
        let s = |v: f64| Tensor::<f64>::scalar(v);
        let mm = |x: &[f64]| multi_mask_loss(&w, &s(x[0]), &s(x[1]), &s(x[2])).unwrap().item();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
        prop_assert!((mm(&sum) - (mm(&a) + k * mm(&b))).abs() < 1e-9);
        prop_assert!((mm(&a) - (w.alpha * a[0] + w.beta * a[1] + w.gamma * a[2])).abs() < 1e-12);

        let terms = |x: &[f64]| LossTerms { adv: s(x[0]), cw: s(x[1]), st: s(x[2]), sb: s(x[3]), percep: s(x[4]), sty: s(x[5]) };
        let total = |x: &[f64]| hybrid_loss(&w, &terms(x)).unwrap().0.item();
        prop_assert!((total(&sum) - (total(&a) + k * total(&b))).abs() < 1e-9);
        let (_, report) = hybrid_loss(&w, &terms(&a)).unwrap();
        let want = a[0] + w.lambda * report.l_mm + w.delta * a[4] + w.eta * a[5];
        prop_assert!((report.l_total - want).abs() < 1e-9);
    }

    #[test]
    fn gram_is_symmetric_and_psd(c in 1usize..7, h in 1usize..5, w in 1usize..5, seed in prop::collection::vec(-3.0f64..3.0, 6 * 4 * 4)) {
        let f = Tensor::from_vec(seed[..c * h * w].to_vec(), &[c, h, w]).unwrap();
        let g = gram(&f).unwrap();
        let d = g.data();
        for i in 0..c {
            for j in 0..c {
                prop_assert_eq!(d[i * c + j], d[j * c + i]);
            }
        }
        // v^T G v = |F^T v|^2 >= 0 for a spread of directions
        for k in 0..8 {
            let v: Vec<f64> = (0..c).map(|i| ((i * 7 + k * 3) as f64).sin()).collect();
            let q: f64 = (0..c).map(|i| (0..c).map(|j| v[i] * d[i * c + j] * v[j]).sum::<f64>()).sum();
            prop_assert!(q >= -1e-8, "quadratic form {q}");
        }
    }

    #[test]
    fn metric_identities(a in mask_strategy(6), b in mask_strategy(6)) {
        let ab = compute_metrics(&a, &b).unwrap();
        let ba = compute_metrics(&b, &a).unwrap();
        prop_assert_eq!(ab.dice, ba.dice);
        prop_assert_eq!(ab.jaccard, ba.jaccard);
        prop_assert_eq!(ab.hd, ba.hd);
        prop_assert_eq!(ab.voe + ab.jaccard, 1.0);
        prop_assert!((2.0 * ab.jaccard / (1.0 + ab.jaccard) - ab.dice).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.dice) && (0.0..=1.0).contains(&ab.jaccard));
        prop_assert!(ab.hd.is_none_or(|h| h >= 0.0));
        if let (Some(x), Some(y)) = (ab.rvd, ba.rvd) {
            // swapping the arguments flips the sign and inverts 1 + rvd
            prop_assert!(x * y <= 0.0);
            prop_assert!(((1.0 + x) * (1.0 + y) - 1.0).abs() < 1e-12);
        }
        let aa = compute_metrics(&a, &a).unwrap();
        prop_assert_eq!(aa.hd, Some(0.0));
        prop_assert_eq!(aa.dice, 1.0);
    }
}

#[test]
fn hausdorff_grows_with_dilation() {
    let n = 20;
    let mut a = MaskVolume::empty([n; 3]);
    for (x, y, z) in [(9, 9, 9), (10, 9, 9), (10, 10, 9), (9, 10, 10), (11, 10, 10), (10, 11, 11)] {
        a.data[(x * n + y) * n + z] = 1;
    }
    let mut last = 0.0;
    for r in 1..5 {
        let hd = compute_metrics(&a, &dilate(&a, r)).unwrap().hd.unwrap();
        assert!(hd >= last, "radius {r}: {hd} < {last}");
        assert!(hd > 0.0);
        last = hd;
    }
}
