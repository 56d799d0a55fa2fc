use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::backend::ParamKey;
use crate::{Float, Shape, Tensor};

/// Named parameter tensors of one model. The group tag distinguishes
/// models sharing a [`crate::Tape`].
#[derive(Clone, Debug)]
pub struct ParamStore<F> {
    group: u32,
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new(group: u32) -> Self {
        ParamStore { group, names: Vec::new(), tensors: Vec::new() }
    }

    pub fn group(&self) -> u32 {
        self.group
    }

    /// Panics on a duplicate name.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<F>) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn key(&self, index: usize) -> ParamKey {
        ParamKey { group: self.group, index }
    }

    pub fn get(&self, index: usize) -> &Tensor<F> {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor<F> {
        &mut self.tensors[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            group: self.group,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Largest absolute elementwise difference against a store with the same layout.
    pub fn max_abs_diff(&self, other: &Self) -> F {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        self.tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| a.zip_map(b, |x, y| x - y).max_abs())
            .fold(F::zero(), F::max)
    }
}

/// He/Kaiming normal weights (`std = sqrt(2 / fan_in)`) multiplied by `scale`.
pub fn kaiming_normal<F: Float, R: Rng + ?Sized>(shape: Shape, scale: f64, rng: &mut R) -> Tensor<F> {
    let fan_in = (shape.c * shape.h * shape.w) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
    let data = (0..shape.numel()).map(|_| F::lit(normal.sample(rng) * scale)).collect();
    Tensor::from_vec(shape, data)
}

/// Symmetric uniform draw in `[-bound, bound)`.
pub fn uniform<F: Float, R: Rng + ?Sized>(shape: Shape, bound: f64, rng: &mut R) -> Tensor<F> {
    let dist = Uniform::new(-bound, bound).expect("valid bound");
    let data = (0..shape.numel()).map(|_| F::lit(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data)
}

/// L2-normalise in place with the same epsilon guard torch uses.
pub fn normalize<F: Float>(x: &mut [F]) {
    let norm = x.iter().map(|&v| v * v).sum::<F>().sqrt().max(F::lit(1e-12));
    for v in x {
        *v = *v / norm;
    }
}

/// Power iteration on a kernel unrolled to `(out, in * kh * kw)`.
/// Updates `u` (length `out`) and `v` (length `in * kh * kw`) in place and
/// returns the estimate `u^T W v`.
pub fn power_iteration<F: Float>(w: &Tensor<F>, u: &mut [F], v: &mut [F], iterations: usize) -> F {
    let rows = w.shape().n;
    let cols = w.len() / rows;
    assert_eq!(u.len(), rows);
    assert_eq!(v.len(), cols);
    for _ in 0..iterations {
        v.fill(F::zero());
        for (row, &ui) in w.data().chunks(cols).zip(u.iter()) {
            for (vj, &x) in v.iter_mut().zip(row) {
                *vj = *vj + x * ui;
            }
        }
        normalize(v);
        for (ui, row) in u.iter_mut().zip(w.data().chunks(cols)) {
            *ui = row.iter().zip(v.iter()).map(|(&a, &b)| a * b).sum();
        }
        normalize(u);
    }
    crate::kernels::bilinear_form(w, u, v)
}
