//! Pixel, perceptual and relativistic adversarial objectives.
//!
//! The plain functions here evaluate losses on tensors. Training builds the
//! same quantities on a [`mrsr_nn::Tape`] through the backend ops, so both
//! paths share the kernels in [`mrsr_nn::kernels`].

mod perceptual;

use std::path::PathBuf;

use mrsr_nn::{kernels, Float, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use perceptual::{
    resolve_vgg19_path, vgg19_layout, FeatureExtractor, InputAdapter, LayerSpec, Tap, IMAGENET_MEAN, IMAGENET_STD,
    VGG19_TAPS, VGG19_WEIGHTS_ENV,
};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid feature extractor: {0}")]
    Extractor(String),
    #[error("cannot read weights {path}: {source}")]
    WeightsIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad weight file {path}: {reason}")]
    Weights { path: PathBuf, reason: String },
}

fn same_shape<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<(), LossError> {
    if a.shape() != b.shape() {
        return Err(LossError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn pixel_loss<F: Float>(sr: &Tensor<F>, hr: &Tensor<F>) -> Result<F, LossError> {
    same_shape(sr, hr)?;
    Ok(kernels::l1_mean(sr, hr))
}

/// Weighted multi-layer feature L1 between `sr` and `hr`, both `(B, 1, H, W)`.
pub fn perceptual_loss<F: Float>(ex: &FeatureExtractor<F>, sr: &Tensor<F>, hr: &Tensor<F>) -> Result<F, LossError> {
    same_shape(sr, hr)?;
    ex.check_input(sr.shape())?;
    let target = ex.features_eval(hr);
    Ok(ex.loss_against(&mut mrsr_nn::Eval, sr, &target).item())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialLosses<F> {
    pub adversarial_g: F,
    pub adversarial_d: F,
}

/// Relativistic-average losses over per-pixel logit maps. Opponent means
/// are taken over the whole batch and every pixel.
///
/// `D = BCE(s(C_r - E[C_f]), 1) + BCE(s(C_f - E[C_r]), 0)` and
/// `G = BCE(s(C_f - E[C_r]), 1) + BCE(s(C_r - E[C_f]), 0)`.
pub fn adversarial_losses<F: Float>(real: &Tensor<F>, fake: &Tensor<F>) -> Result<AdversarialLosses<F>, LossError> {
    same_shape(real, fake)?;
    if !real.all_finite() || !fake.all_finite() {
        return Err(LossError::NonFinite("logits"));
    }
    Ok(AdversarialLosses {
        adversarial_d: kernels::relativistic_bce(real, fake),
        adversarial_g: kernels::relativistic_bce(fake, real),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { pixel: 1.0, perceptual: 1.0, adversarial: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [("pixel", self.pixel), ("perceptual", self.perceptual), ("adversarial", self.adversarial)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(format!("loss weight {name} = {w} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// All loss terms of one training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial_g: f64,
    pub total_g: f64,
    pub adversarial_d: f64,
    pub weights: LossWeights,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.pixel, self.perceptual, self.adversarial_g, self.total_g, self.adversarial_d]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Unit-weighted generator total.
pub fn combine(pixel: f64, perceptual: f64, adversarial_g: f64) -> LossBundle {
    combine_weighted(LossWeights::default(), pixel, perceptual, adversarial_g)
}

pub fn combine_weighted(weights: LossWeights, pixel: f64, perceptual: f64, adversarial_g: f64) -> LossBundle {
    LossBundle {
        pixel,
        perceptual,
        adversarial_g,
        total_g: weights.pixel * pixel + weights.perceptual * perceptual + weights.adversarial * adversarial_g,
        adversarial_d: 0.0,
        weights,
    }
}
