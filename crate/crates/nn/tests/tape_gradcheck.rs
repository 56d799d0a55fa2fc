//! Reverse-mode gradients against central finite differences for a network
//! touching every recorded op.

use mrsr_nn::{power_iteration, Backend, ConvGeom, Eval, ParamStore, Shape, Tape, Tensor};
use proptest::prelude::*;

fn wave(shape: Shape, phase: f64) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|i| ((i as f64 + 1.0) * 0.618 + phase).sin() * 0.5).collect())
}

struct Toy {
    params: ParamStore<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl Toy {
    fn new() -> Self {
        let mut params = ParamStore::new(0);
        params.push("c1.w", wave(Shape::new(3, 3, 3, 3), 0.1));
        params.push("c1.b", wave(Shape::vector(3), 0.2));
        params.push("down.w", wave(Shape::new(4, 6, 4, 4), 0.3));
        params.push("out.w", wave(Shape::new(1, 4, 3, 3), 0.4));
        let mut u = vec![1.0; 4];
        let mut v = vec![0.0; 6 * 16];
        power_iteration(params.get(2), &mut u, &mut v, 20);
        Toy { params, u, v }
    }

    fn forward<B: Backend<f64>>(&self, b: &mut B, x: &B::Value, target: &B::Value) -> B::Value {
        let p = &self.params;
        let same = ConvGeom { stride: 1, pad: 1 };
        let x3 = b.repeat_channels(x, 3);
        let xn = b.channel_affine(&x3, &[2.0, 1.0, 0.5], &[0.1, 0.0, -0.1]);
        let w1 = b.param(p.key(0), p.get(0));
        let b1 = b.param(p.key(1), p.get(1));
        let h = b.conv2d(&xn, &w1, Some(&b1), same);
        let h = b.leaky_relu(&h, 0.2);
        let cat = b.concat(&[&h, &xn]);
        let wd = b.param(p.key(2), p.get(2));
        let wd = b.spectral_normalize(&wd, &self.u, &self.v);
        let d = b.conv2d(&cat, &wd, None, ConvGeom { stride: 2, pad: 1 });
        let d = b.relu(&d);
        let up = b.upsample_bilinear2x(&d);
        let pooled = b.max_pool2x2(&up);
        let up2 = b.upsample_nearest2x(&pooled);
        let mixed = b.residual(&up, &up2, 0.3);
        let wo = b.param(p.key(3), p.get(3));
        let out = b.conv2d(&mixed, &wo, None, same);
        let l1 = b.l1_mean(&out, target);
        let adv = b.relativistic_bce(&out, x);
        let sum = b.add(&out, x);
        let l1b = b.l1_mean(&sum, target);
        b.weighted_sum(&[(&l1, 1.0), (&adv, 0.7), (&l1b, 0.5)])
    }

    fn loss(&self, x: &Tensor<f64>, target: &Tensor<f64>) -> f64 {
        self.forward(&mut Eval, x, target).item()
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[test]
fn every_op_matches_finite_differences() {
    let shape = Shape::new(2, 1, 8, 8);
    let x = wave(shape, 1.0);
    let target = wave(shape, 2.0).map(|v| v + 0.05);
    let mut toy = Toy::new();

    let mut tape = Tape::new(&[0]);
    let xv = tape.watch(x.clone());
    let tv = tape.input(target.clone());
    let loss = toy.forward(&mut tape, &xv, &tv);
    let analytic = tape.backward(loss);

    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..toy.params.len() {
        let g = analytic.param(toy.params.key(i)).expect("gradient for every parameter").clone();
        for j in 0..g.len() {
            let orig = toy.params.get(i).data()[j];
            toy.params.get_mut(i).data_mut()[j] = orig + eps;
            let up = toy.loss(&x, &target);
            toy.params.get_mut(i).data_mut()[j] = orig - eps;
            let down = toy.loss(&x, &target);
            toy.params.get_mut(i).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(g.data()[j], numeric));
        }
    }
    let gx = &analytic.watched[&xv];
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[j] += eps;
        let mut xm = x.clone();
        xm.data_mut()[j] -= eps;
        let numeric = (toy.loss(&xp, &target) - toy.loss(&xm, &target)) / (2.0 * eps);
        worst = worst.max(rel_err(gx.data()[j], numeric));
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn frozen_group_passes_gradient_but_collects_none() {
    let toy = Toy::new();
    let x = wave(Shape::new(1, 1, 8, 8), 0.5);
    let mut tape = Tape::new(&[]);
    let xv = tape.watch(x.clone());
    let tv = tape.input(x.map(|v| v * 0.5));
    let loss = toy.forward(&mut tape, &xv, &tv);
    let grads = tape.backward(loss);
    assert!(grads.params.is_empty());
    assert!(grads.watched[&xv].max_abs() > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tape_forward_equals_eager_forward(phase in -3.0f64..3.0) {
        let toy = Toy::new();
        let x = wave(Shape::new(1, 1, 8, 8), phase);
        let target = wave(Shape::new(1, 1, 8, 8), -phase);
        let mut tape = Tape::new(&[0]);
        let xv = tape.input(x.clone());
        let tv = tape.input(target.clone());
        let l = toy.forward(&mut tape, &xv, &tv);
        prop_assert_eq!(tape.value(&l).item(), toy.loss(&x, &target));
    }
}
