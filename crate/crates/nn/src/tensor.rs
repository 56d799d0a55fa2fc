use std::fmt;
use std::sync::Arc;

use crate::Float;

/// NCHW extents. Weights use `(out, in, kh, kw)`; vectors and biases use
/// `(len, 1, 1, 1)`; scalars are `(1, 1, 1, 1)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { n: 1, c: 1, h: 1, w: 1 };

    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn vector(len: usize) -> Self {
        Shape { n: len, c: 1, h: 1, w: 1 }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_dims(dims: &[usize]) -> Option<Self> {
        match *dims {
            [] => Some(Shape::SCALAR),
            [a] => Some(Shape::new(a, 1, 1, 1)),
            [a, b] => Some(Shape::new(a, b, 1, 1)),
            [a, b, c] => Some(Shape::new(a, b, c, 1)),
            [a, b, c, d] => Some(Shape::new(a, b, c, d)),
            _ => None,
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense row-major tensor with shared, copy-on-write storage.
///
/// Cloning is cheap; [`Tensor::data_mut`] copies only when the buffer is
/// shared.
#[derive(Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Shape,
    data: Arc<Vec<F>>,
}

impl<F: Float> Tensor<F> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: Shape, value: F) -> Self {
        Tensor { shape, data: Arc::new(vec![value; shape.numel()]) }
    }

    pub fn scalar(value: F) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    /// Panics if `data.len()` disagrees with `shape`.
    pub fn from_vec(shape: Shape, data: Vec<F>) -> Self {
        assert_eq!(shape.numel(), data.len(), "tensor data length {} does not match shape {shape}", data.len());
        Tensor { shape, data: Arc::new(data) }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data: Arc::new(data) }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<F> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> F {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.len(), 1, "item() on tensor of shape {}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: Shape) -> Self {
        assert_eq!(shape.numel(), self.shape.numel(), "reshape {} -> {shape}", self.shape);
        Tensor { shape, data: Arc::clone(&self.data) }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor { shape: self.shape, data: Arc::new(self.data.iter().map(|&x| f(x)).collect()) }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        let data = self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect();
        Tensor { shape: self.shape, data: Arc::new(data) }
    }

    /// `self += alpha * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Self, alpha: F) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, &b) in self.data_mut().iter_mut().zip(other.data.iter()) {
            *a = *a + alpha * b;
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> F {
        self.sum() / F::from_usize(self.len()).unwrap()
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn l2_norm(&self) -> F {
        self.data.iter().map(|&x| x * x).sum::<F>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<G: Float>(&self) -> Tensor<G> {
        let data = self.data.iter().map(|&x| G::lit(x.to_f64_lossless())).collect();
        Tensor { shape: self.shape, data: Arc::new(data) }
    }

    /// Copy of batch entry `i` as a single-entry tensor.
    pub fn batch_item(&self, i: usize) -> Self {
        assert!(i < self.shape.n, "batch index {i} out of range for {}", self.shape);
        let per = self.shape.c * self.shape.plane();
        let shape = Shape::new(1, self.shape.c, self.shape.h, self.shape.w);
        Tensor::from_vec(shape, self.data[i * per..(i + 1) * per].to_vec())
    }

    /// Concatenate single-or-multi entry tensors along the batch axis.
    pub fn stack_batch(items: &[Self]) -> Self {
        assert!(!items.is_empty(), "stack_batch of nothing");
        let s0 = items[0].shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            assert_eq!((t.shape.c, t.shape.h, t.shape.w), (s0.c, s0.h, s0.w), "stack_batch mismatch");
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Tensor::from_vec(Shape::new(n, s0.c, s0.h, s0.w), data)
    }
}

impl<F: fmt::Debug> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<&F> = self.data.iter().take(8).collect();
        write!(f, "Tensor{} {:?}", self.shape, preview)?;
        if self.data.len() > 8 {
            write!(f, "...")?;
        }
        Ok(())
    }
}
