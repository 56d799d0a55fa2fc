use crate::tape::Gradients;
use crate::{Float, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.99, eps: 1e-8 }
    }
}

/// Adam with bias correction and no weight decay. Moments are laid out
/// parallel to the [`ParamStore`] they were created for.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = |_| (0..params.len()).map(|i| Tensor::zeros(params.get(i).shape())).collect();
        Adam { config, step: 0, m: zeros(()), v: zeros(()) }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<F>], &[Tensor<F>]) {
        (&self.m, &self.v)
    }

    /// Restore a saved optimizer state. Panics if the moment shapes disagree.
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<F>>, v: Vec<Tensor<F>>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        for ((a, b), c) in m.iter().zip(&self.m).zip(&v) {
            assert_eq!(a.shape(), b.shape());
            assert_eq!(c.shape(), b.shape());
        }
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// Apply one update to every parameter of `params` that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bc1 = F::lit(1.0 - c.beta1.powi(t));
        let bc2 = F::lit(1.0 - c.beta2.powi(t));
        let (lr, eps) = (F::lit(c.lr), F::lit(c.eps));
        for i in 0..params.len() {
            let Some(g) = grads.param(params.key(i)) else { continue };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(i).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Backend, Shape, Tape};

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        // With bias correction, step one is lr * g / (|g| + eps) ~ lr * sign(g).
        let mut store = ParamStore::<f64>::new(0);
        store.push("w", Tensor::from_vec(Shape::vector(2), vec![1.0, -1.0]));
        let mut adam = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }, &store);
        let mut tape = Tape::new(&[0]);
        let w = tape.param(store.key(0), store.get(0));
        let zero = tape.input(Tensor::zeros(Shape::vector(2)));
        let loss = tape.l1_mean(&w, &zero);
        let grads = tape.backward(loss);
        adam.step(&mut store, &grads);
        let p = store.get(0).data();
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn adam_minimises_a_quadratic_bowl() {
        let mut store = ParamStore::<f64>::new(0);
        store.push("w", Tensor::from_vec(Shape::vector(3), vec![2.0, -3.0, 0.5]));
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &store);
        for _ in 0..500 {
            let mut tape = Tape::new(&[0]);
            let w = tape.param(store.key(0), store.get(0));
            let zero = tape.input(Tensor::zeros(Shape::vector(3)));
            let loss = tape.l1_mean(&w, &zero);
            let grads = tape.backward(loss);
            adam.step(&mut store, &grads);
        }
        assert!(store.get(0).max_abs() < 0.1);
    }
}
