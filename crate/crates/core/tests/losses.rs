//! Loss functions against direct oracles.

use mrsr::losses::{
    adversarial_losses, combine, combine_weighted, perceptual_loss, pixel_loss, FeatureExtractor, InputAdapter,
    LayerSpec, LossWeights, Tap,
};
use mrsr_nn::{Backend, ConvGeom, Eval, ParamKey, Shape, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect())
}

#[test]
fn pixel_loss_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let s = Shape::new(2, 1, 9, 13);
        let (a, b) = (random(s, &mut rng, 0.0, 1.0), random(s, &mut rng, 0.0, 1.0));
        let mut sum = 0.0;
        for i in 0..a.len() {
            sum += (a.data()[i] - b.data()[i]).abs();
        }
        assert!((pixel_loss(&a, &b).unwrap() - sum / a.len() as f64).abs() <= 1e-7);
        assert_eq!(pixel_loss(&a, &a).unwrap(), 0.0);
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[test]
fn adversarial_losses_match_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let s = Shape::new(2, 1, 4, 5);
        let (real, fake) = (random(s, &mut rng, -4.0, 4.0), random(s, &mut rng, -4.0, 4.0));
        let (er, ef) = (mean(real.data()), mean(fake.data()));
        let (mut d1, mut d0, mut g1, mut g0) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..real.len() {
            let (r, f) = (real.data()[i], fake.data()[i]);
            d1 += -sigmoid(r - ef).ln();
            d0 += -(1.0 - sigmoid(f - er)).ln();
            g1 += -sigmoid(f - er).ln();
            g0 += -(1.0 - sigmoid(r - ef)).ln();
        }
        let n = real.len() as f64;
        let l = adversarial_losses(&real, &fake).unwrap();
        assert!((l.adversarial_d - (d1 + d0) / n).abs() <= 1e-6);
        assert!((l.adversarial_g - (g1 + g0) / n).abs() <= 1e-6);
    }
}

#[test]
fn adversarial_losses_reject_bad_logits() {
    let s = Shape::new(1, 1, 2, 2);
    assert!(adversarial_losses(&Tensor::full(s, f64::NAN), &Tensor::zeros(s)).is_err());
    assert!(adversarial_losses(&Tensor::<f64>::zeros(s), &Tensor::zeros(Shape::new(1, 1, 2, 3))).is_err());
    let sep = adversarial_losses(&Tensor::full(s, 30.0f64), &Tensor::full(s, -30.0)).unwrap();
    assert!(sep.adversarial_d < 1e-12);
}

#[test]
fn combine_sums_terms() {
    assert!((combine(0.5, 0.3, 0.2).total_g - 1.0).abs() < 1e-15);
    assert_eq!(combine(0.0, 0.0, 0.0).total_g, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (p, q, r): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let b = combine(p, q, r);
        assert_eq!(b.total_g, p + q + r);
        assert_eq!((b.pixel, b.perceptual, b.adversarial_g), (p, q, r));
        let w = LossWeights { pixel: 1.0, perceptual: 0.5, adversarial: 0.01 };
        assert!((combine_weighted(w, p, q, r).total_g - (p + 0.5 * q + 0.01 * r)).abs() < 1e-15);
    }
}

/// conv(1->1) -> relu -> conv(1->1), tapped after the second conv.
fn toy_extractor() -> FeatureExtractor<f64> {
    let specs = [LayerSpec::Conv { cin: 1, cout: 1 }, LayerSpec::Relu, LayerSpec::Conv { cin: 1, cout: 1 }];
    let taps = vec![Tap { name: "out".into(), layer: 2, weight: 0.7 }];
    let mut ex = FeatureExtractor::random(&specs, taps, InputAdapter::identity(), 0).unwrap();
    let mut k1 = [0.0; 9];
    k1[4] = 2.0;
    k1[5] = -1.0;
    let mut k2 = [0.0; 9];
    k2[1] = 0.5;
    k2[4] = 1.0;
    for (name, value) in [
        ("features.0.weight", Tensor::from_vec(Shape::new(1, 1, 3, 3), k1.to_vec())),
        ("features.0.bias", Tensor::from_vec(Shape::vector(1), vec![0.1])),
        ("features.2.weight", Tensor::from_vec(Shape::new(1, 1, 3, 3), k2.to_vec())),
        ("features.2.bias", Tensor::from_vec(Shape::vector(1), vec![-0.05])),
    ] {
        let i = ex.params.find(name).unwrap();
        *ex.params.get_mut(i) = value;
    }
    ex
}

/// The toy network by hand: `h = relu(2 x[i][j] - x[i][j+1] + 0.1)`,
/// `f = h[i][j] + 0.5 h[i-1][j] - 0.05`, zero outside the image.
fn toy_features(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (h, w) = (x.len(), x[0].len());
    let at = |a: &[Vec<f64>], i: isize, j: isize| {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            0.0
        } else {
            a[i as usize][j as usize]
        }
    };
    let hidden: Vec<Vec<f64>> = (0..h)
        .map(|i| (0..w).map(|j| (2.0 * x[i][j] - at(x, i as isize, j as isize + 1) + 0.1).max(0.0)).collect())
        .collect();
    (0..h)
        .map(|i| (0..w).map(|j| hidden[i][j] + 0.5 * at(&hidden, i as isize - 1, j as isize) - 0.05).collect())
        .collect()
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let s = t.shape();
    (0..s.h).map(|i| (0..s.w).map(|j| t.at(0, 0, i, j)).collect()).collect()
}

#[test]
fn perceptual_toy_backbone_matches_hand_computation() {
    let ex = toy_extractor();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let s = Shape::new(1, 1, 6, 7);
        let (a, b) = (random(s, &mut rng, -0.5, 1.0), random(s, &mut rng, -0.5, 1.0));
        let (fa, fb) = (toy_features(&rows(&a)), toy_features(&rows(&b)));
        let mut sum = 0.0;
        for (ra, rb) in fa.iter().zip(&fb) {
            for (p, q) in ra.iter().zip(rb) {
                sum += (p - q).abs();
            }
        }
        let expected = 0.7 * sum / 42.0;
        let got = perceptual_loss(&ex, &a, &b).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }
}

#[test]
fn perceptual_identity_symmetry_and_size_checks() {
    let ex = FeatureExtractor::<f32>::vgg19_random(1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = Shape::new(1, 1, 32, 32);
    let a = Tensor::from_vec(s, (0..s.numel()).map(|_| rng.random::<f32>()).collect());
    let b = Tensor::from_vec(s, (0..s.numel()).map(|_| rng.random::<f32>()).collect());
    assert_eq!(perceptual_loss(&ex, &a, &a).unwrap(), 0.0);
    let (ab, ba) = (perceptual_loss(&ex, &a, &b).unwrap(), perceptual_loss(&ex, &b, &a).unwrap());
    assert!(ab > 0.0);
    assert!((ab - ba).abs() <= 1e-6 * ab, "{ab} vs {ba}");
    let small = Tensor::zeros(Shape::new(1, 1, 16, 16));
    assert!(perceptual_loss(&ex, &small, &small).is_err());
    let odd = Tensor::zeros(Shape::new(1, 1, 40, 40));
    assert!(perceptual_loss(&ex, &odd, &odd).is_err());
}

/// Unit-weighted generator objective on an 8x8 image: L1 + toy perceptual +
/// relativistic loss with a fixed 3x3 conv as the discriminator.
fn total_g<B: Backend<f64>>(
    bk: &mut B,
    sr: &B::Value,
    hr: &Tensor<f64>,
    ex: &FeatureExtractor<f64>,
    disc: &Tensor<f64>,
    real_logits: &Tensor<f64>,
) -> B::Value {
    let target = bk.input(hr.clone());
    let pixel = bk.l1_mean(sr, &target);
    let perceptual = ex.loss_against(bk, sr, &ex.features_eval(hr));
    let w = bk.param(ParamKey { group: 9, index: 0 }, disc);
    let fake = bk.conv2d(sr, &w, None, ConvGeom { stride: 1, pad: 1 });
    let real = bk.input(real_logits.clone());
    let adv = bk.relativistic_bce(&fake, &real);
    bk.weighted_sum(&[(&pixel, 1.0), (&perceptual, 1.0), (&adv, 1.0)])
}

#[test]
fn total_generator_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = Shape::new(1, 1, 8, 8);
    let (sr, hr) = (random(s, &mut rng, 0.0, 1.0), random(s, &mut rng, 0.0, 1.0));
    let disc = random(Shape::new(1, 1, 3, 3), &mut rng, -0.5, 0.5);
    let real_logits = random(s, &mut rng, -1.0, 1.0);
    let ex = toy_extractor();

    let mut tape = Tape::new(&[]);
    let node = tape.watch(sr.clone());
    let loss = total_g(&mut tape, &node, &hr, &ex, &disc, &real_logits);
    let grads = tape.backward(loss);
    let analytic = &grads.watched[&node];

    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..sr.len() {
        let (mut up, mut down) = (sr.clone(), sr.clone());
        up.data_mut()[j] += eps;
        down.data_mut()[j] -= eps;
        let f = |x: &Tensor<f64>| total_g(&mut Eval, x, &hr, &ex, &disc, &real_logits).item();
        let numeric = (f(&up) - f(&down)) / (2.0 * eps);
        let a = analytic.data()[j];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    assert!(worst <= 1e-3, "max relative error {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_the_error_raises_pixel_loss(seed in any::<u64>(), alpha in 1.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Shape::new(1, 1, 6, 6);
        let hr = random(s, &mut rng, 0.0, 1.0);
        let err = random(s, &mut rng, -0.3, 0.3);
        let sr = hr.zip_map(&err, |h, e| h + e);
        let scaled = hr.zip_map(&err, |h, e| h + alpha * e);
        prop_assert!(pixel_loss(&scaled, &hr).unwrap() > pixel_loss(&sr, &hr).unwrap());
    }

    #[test]
    fn identity_gives_zero_losses(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(Shape::new(1, 1, 5, 5), &mut rng, -2.0, 2.0);
        prop_assert_eq!(pixel_loss(&x, &x).unwrap(), 0.0);
        prop_assert_eq!(perceptual_loss(&toy_extractor(), &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn equal_constant_logits_give_two_ln_two(c in -20.0f64..20.0, n in 1usize..4, side in 1usize..9) {
        let t = Tensor::full(Shape::new(n, 1, side, side), c);
        let l = adversarial_losses(&t, &t).unwrap();
        prop_assert!((l.adversarial_d - 2.0 * std::f64::consts::LN_2).abs() <= 1e-6);
        prop_assert!((l.adversarial_g - 2.0 * std::f64::consts::LN_2).abs() <= 1e-6);
    }
}
