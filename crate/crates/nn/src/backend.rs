use crate::kernels::{self, ConvGeom};
use crate::{Float, Tensor};

/// Identifies one parameter tensor: the owning model's group tag and the
/// tensor's slot inside that model's [`crate::ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub group: u32,
    pub index: usize,
}

/// The operations networks are written against.
///
/// [`Eval`] runs them eagerly and keeps nothing; [`crate::Tape`] records them
/// for reverse-mode differentiation. Shape violations are programming errors
/// and panic; callers validate user-facing inputs before reaching here.
pub trait Backend<F: Float> {
    type Value: Clone;

    /// A constant input that never receives gradient.
    fn input(&mut self, t: Tensor<F>) -> Self::Value;
    fn param(&mut self, key: ParamKey, t: &Tensor<F>) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<F>;

    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: Option<&Self::Value>, geom: ConvGeom) -> Self::Value;
    fn leaky_relu(&mut self, x: &Self::Value, slope: F) -> Self::Value;
    fn relu(&mut self, x: &Self::Value) -> Self::Value {
        self.leaky_relu(x, F::zero())
    }
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    /// `x + scale * branch`
    fn residual(&mut self, x: &Self::Value, branch: &Self::Value, scale: F) -> Self::Value;
    fn concat(&mut self, xs: &[&Self::Value]) -> Self::Value;
    fn upsample_nearest2x(&mut self, x: &Self::Value) -> Self::Value;
    fn upsample_bilinear2x(&mut self, x: &Self::Value) -> Self::Value;
    fn max_pool2x2(&mut self, x: &Self::Value) -> Self::Value;
    fn repeat_channels(&mut self, x: &Self::Value, times: usize) -> Self::Value;
    fn channel_affine(&mut self, x: &Self::Value, scale: &[F], shift: &[F]) -> Self::Value;
    /// `w / (u^T W v)` with `u`, `v` treated as constants.
    fn spectral_normalize(&mut self, w: &Self::Value, u: &[F], v: &[F]) -> Self::Value;

    /// Mean absolute difference, as a scalar.
    fn l1_mean(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    /// Relativistic-average BCE; see [`kernels::relativistic_bce`].
    fn relativistic_bce(&mut self, pos: &Self::Value, neg: &Self::Value) -> Self::Value;
    /// `sum_i weight_i * term_i` over scalars.
    fn weighted_sum(&mut self, terms: &[(&Self::Value, F)]) -> Self::Value;
}

/// Eager, gradient-free execution. Intermediate tensors are dropped as soon
/// as the network code lets go of them.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl<F: Float> Backend<F> for Eval {
    type Value = Tensor<F>;

    fn input(&mut self, t: Tensor<F>) -> Tensor<F> {
        t
    }

    fn param(&mut self, _key: ParamKey, t: &Tensor<F>) -> Tensor<F> {
        t.clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor<F>) -> &'a Tensor<F> {
        v
    }

    fn conv2d(&mut self, x: &Tensor<F>, w: &Tensor<F>, b: Option<&Tensor<F>>, geom: ConvGeom) -> Tensor<F> {
        kernels::conv2d(x, w, b, geom)
    }

    fn leaky_relu(&mut self, x: &Tensor<F>, slope: F) -> Tensor<F> {
        kernels::leaky_relu(x, slope)
    }

    fn add(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        a.zip_map(b, |x, y| x + y)
    }

    fn residual(&mut self, x: &Tensor<F>, branch: &Tensor<F>, scale: F) -> Tensor<F> {
        x.zip_map(branch, |a, b| a + scale * b)
    }

    fn concat(&mut self, xs: &[&Tensor<F>]) -> Tensor<F> {
        kernels::concat_channels(xs)
    }

    fn upsample_nearest2x(&mut self, x: &Tensor<F>) -> Tensor<F> {
        kernels::upsample_nearest2x(x)
    }

    fn upsample_bilinear2x(&mut self, x: &Tensor<F>) -> Tensor<F> {
        kernels::upsample_bilinear2x(x)
    }

    fn max_pool2x2(&mut self, x: &Tensor<F>) -> Tensor<F> {
        kernels::max_pool2x2(x).0
    }

    fn repeat_channels(&mut self, x: &Tensor<F>, times: usize) -> Tensor<F> {
        kernels::repeat_channels(x, times)
    }

    fn channel_affine(&mut self, x: &Tensor<F>, scale: &[F], shift: &[F]) -> Tensor<F> {
        kernels::channel_affine(x, scale, shift)
    }

    fn spectral_normalize(&mut self, w: &Tensor<F>, u: &[F], v: &[F]) -> Tensor<F> {
        let sigma = kernels::bilinear_form(w, u, v);
        w.map(|x| x / sigma)
    }

    fn l1_mean(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        Tensor::scalar(kernels::l1_mean(a, b))
    }

    fn relativistic_bce(&mut self, pos: &Tensor<F>, neg: &Tensor<F>) -> Tensor<F> {
        Tensor::scalar(kernels::relativistic_bce(pos, neg))
    }

    fn weighted_sum(&mut self, terms: &[(&Tensor<F>, F)]) -> Tensor<F> {
        Tensor::scalar(terms.iter().map(|(t, w)| t.item() * *w).sum())
    }
}
