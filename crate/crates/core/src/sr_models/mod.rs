//! The RRDB generator and the spectrally normalised U-Net discriminator.

mod discriminator;
mod generator;

use mrsr_nn::{Backend, ConvGeom, Float, ParamStore, Shape, Tensor};
use rand::Rng;
use thiserror::Error;

pub use discriminator::{Discriminator, DiscriminatorConfig, SpectralState, SN_INIT_ITERATIONS};
pub use generator::{Generator, GeneratorConfig, UpsampleMode};

/// Tape group tags. Each model owns one so a step can train one network
/// while the other stays frozen.
pub const GENERATOR_GROUP: u32 = 0;
pub const DISCRIMINATOR_GROUP: u32 = 1;
pub const FEATURE_GROUP: u32 = 2;

/// Slope of every leaky ReLU in both networks.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("bad input shape: {0}")]
    Shape(String),
    #[error("parameter mismatch: {0}")]
    Params(String),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, ModelError> {
    Err(ModelError::Config(msg.into()))
}

/// Weight initialisation for one conv.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// Kaiming normal (fan-in, gain sqrt 2) times a scale, zero bias.
    KaimingScaled(f64),
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weight and bias.
    FanInUniform,
}

/// Slots of one convolution inside a [`ParamStore`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    pub weight: usize,
    pub bias: Option<usize>,
    pub geom: ConvGeom,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn push<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        (cin, cout, k): (usize, usize, usize),
        geom: ConvGeom,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Conv {
        let shape = Shape::new(cout, cin, k, k);
        let fan_in = (cin * k * k) as f64;
        let w = match init {
            Init::KaimingScaled(scale) => mrsr_nn::kaiming_normal(shape, scale, rng),
            Init::FanInUniform => mrsr_nn::uniform(shape, 1.0 / fan_in.sqrt(), rng),
        };
        let weight = store.push(format!("{name}.weight"), w);
        let bias = bias.then(|| {
            let b = match init {
                Init::KaimingScaled(_) => Tensor::zeros(Shape::vector(cout)),
                Init::FanInUniform => mrsr_nn::uniform(Shape::vector(cout), 1.0 / fan_in.sqrt(), rng),
            };
            store.push(format!("{name}.bias"), b)
        });
        Conv { weight, bias, geom }
    }

    pub fn apply<F: Float, B: Backend<F>>(&self, bk: &mut B, store: &ParamStore<F>, x: &B::Value) -> B::Value {
        let w = bk.param(store.key(self.weight), store.get(self.weight));
        let b = self.bias.map(|i| bk.param(store.key(i), store.get(i)));
        bk.conv2d(x, &w, b.as_ref(), self.geom)
    }

    /// Same as [`Conv::apply`] with a spectrally normalised weight.
    pub fn apply_sn<F: Float, B: Backend<F>>(
        &self,
        bk: &mut B,
        store: &ParamStore<F>,
        u: &[F],
        v: &[F],
        x: &B::Value,
    ) -> B::Value {
        let w = bk.param(store.key(self.weight), store.get(self.weight));
        let w = bk.spectral_normalize(&w, u, v);
        let b = self.bias.map(|i| bk.param(store.key(i), store.get(i)));
        bk.conv2d(x, &w, b.as_ref(), self.geom)
    }
}

pub(crate) const SAME3: ConvGeom = ConvGeom { stride: 1, pad: 1 };

/// Number of scalars in a `k x k` conv.
pub(crate) const fn conv_params(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    cin * cout * k * k + if bias { cout } else { 0 }
}

/// Copy named tensors into `store`, requiring an exact name and shape match.
pub(crate) fn load_named<F: Float>(
    store: &mut ParamStore<F>,
    named: impl IntoIterator<Item = (String, Tensor<F>)>,
) -> Result<(), ModelError> {
    let mut seen = vec![false; store.len()];
    for (name, t) in named {
        let i = store.find(&name).ok_or_else(|| ModelError::Params(format!("unexpected tensor {name}")))?;
        if store.get(i).shape() != t.shape() {
            return Err(ModelError::Params(format!(
                "{name}: shape {:?}, model expects {:?}",
                t.shape(),
                store.get(i).shape()
            )));
        }
        *store.get_mut(i) = t;
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(ModelError::Params(format!("missing tensor {}", store.name(i))));
    }
    Ok(())
}

/// Require a finite `(B, channels, H, W)` image batch with H, W multiples
/// of `multiple` and at least `min_side`.
pub(crate) fn check_image<F: Float>(
    x: &Tensor<F>,
    channels: usize,
    min_side: usize,
    multiple: usize,
) -> Result<(), ModelError> {
    let s = x.shape();
    if s.c != channels {
        return Err(ModelError::Shape(format!("expected {channels} channel(s), got shape {s:?}")));
    }
    if s.n == 0 || s.h < min_side || s.w < min_side {
        return Err(ModelError::Shape(format!("spatial size {}x{} below minimum {min_side}", s.h, s.w)));
    }
    if !s.h.is_multiple_of(multiple) || !s.w.is_multiple_of(multiple) {
        return Err(ModelError::Shape(format!("spatial size {}x{} not divisible by {multiple}", s.h, s.w)));
    }
    if !x.all_finite() {
        return Err(ModelError::Shape("input contains non-finite values".into()));
    }
    Ok(())
}

/// Wrap a 2D image as a `(1, 1, H, W)` tensor.
pub fn image_to_tensor(img: ndarray::ArrayView2<f32>) -> Tensor<f32> {
    let (h, w) = img.dim();
    Tensor::from_vec(Shape::new(1, 1, h, w), img.iter().copied().collect())
}

/// Channel 0 of batch item `n` as a 2D image.
pub fn tensor_to_image(t: &Tensor<f32>, n: usize) -> ndarray::Array2<f32> {
    let s = t.shape();
    let plane = &t.data()[n * s.c * s.plane()..][..s.plane()];
    ndarray::Array2::from_shape_vec((s.h, s.w), plane.to_vec()).expect("plane size")
}
