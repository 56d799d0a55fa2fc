use mrsr_nn::{Backend, ConvGeom, Eval, Float, ParamStore, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_image, config_err, conv_params, load_named, Conv, Init, ModelError, DISCRIMINATOR_GROUP, SAME3};

/// Power iterations run when a discriminator is built, so the first
/// forward pass already uses a converged estimate.
pub const SN_INIT_ITERATIONS: usize = 500;

const DOWN: ConvGeom = ConvGeom { stride: 2, pad: 1 };

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub num_down_stages: usize,
    pub num_up_stages: usize,
    pub spectral_norm: bool,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            in_channels: 1,
            base_channels: 64,
            num_down_stages: 3,
            num_up_stages: 3,
            spectral_norm: true,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn tiny() -> Self {
        DiscriminatorConfig { base_channels: 8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_channels != 1 {
            return config_err("the discriminator is single-channel: in_channels must be 1");
        }
        if self.base_channels == 0 || self.num_down_stages == 0 {
            return config_err("base_channels and num_down_stages must be positive");
        }
        if self.num_up_stages != self.num_down_stages {
            return config_err(format!(
                "U-Net needs matching stages, got {} down and {} up",
                self.num_down_stages, self.num_up_stages
            ));
        }
        if self.num_down_stages > 8 {
            return config_err("at most 8 down stages");
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return config_err(format!("leaky_slope {} outside [0, 1)", self.leaky_slope));
        }
        Ok(())
    }

    /// Channel width after down stage `i` (0 = the input conv).
    pub fn width(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Spatial sides must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.num_down_stages
    }

    pub fn parameter_count(&self) -> usize {
        let d = self.num_down_stages;
        let b = self.base_channels;
        let down: usize = (1..=d).map(|i| conv_params(self.width(i - 1), self.width(i), 4, false)).sum();
        let up: usize = (1..=d).map(|i| conv_params(self.width(d - i + 1), self.width(d - i), 3, false)).sum();
        conv_params(self.in_channels, b, 3, true)
            + down
            + up
            + 2 * conv_params(b, b, 3, false)
            + conv_params(b, 1, 3, true)
    }
}

/// Power-iteration vectors for one spectrally normalised weight.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState<F> {
    /// Slot of the weight in the parameter store.
    pub weight: usize,
    /// Left singular vector estimate, one entry per output channel.
    pub u: Vec<F>,
    /// Right singular vector estimate over `in * kh * kw`.
    pub v: Vec<F>,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    conv: Conv,
    /// Index into `spectral` when normalised.
    sn: Option<usize>,
}

/// U-Net discriminator producing a per-pixel realness logit map.
///
/// Encoder: 3x3 input conv, then `num_down_stages` 4x4 stride-2 convs
/// doubling the width. Decoder: per stage, bilinear x2, 3x3 conv halving the
/// width, leaky ReLU, add the matching encoder feature. Head: two 3x3 convs
/// and a 3x3 conv to one channel. Every conv except the input and output
/// convs is spectrally normalised when enabled.
#[derive(Clone, Debug)]
pub struct Discriminator<F> {
    config: DiscriminatorConfig,
    pub params: ParamStore<F>,
    pub spectral: Vec<SpectralState<F>>,
    conv_in: Conv,
    down: Vec<Layer>,
    up: Vec<Layer>,
    head: [Layer; 2],
    conv_out: Conv,
}

impl<F: Float> Discriminator<F> {
    pub fn new(config: &DiscriminatorConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(DISCRIMINATOR_GROUP);
        let mut spectral = Vec::new();
        let d = config.num_down_stages;
        let b = config.base_channels;
        let mut n = 0;
        let mut name = || {
            n += 1;
            format!("conv{}", n - 1)
        };
        let conv_in =
            Conv::push(&mut params, &name(), (config.in_channels, b, 3), SAME3, true, Init::FanInUniform, &mut rng);
        let mut layer = |params: &mut ParamStore<F>, name: String, dims, geom, rng: &mut ChaCha8Rng| {
            let conv = Conv::push(params, &name, dims, geom, false, Init::FanInUniform, rng);
            let sn = config.spectral_norm.then(|| {
                let w = params.get(conv.weight);
                let rows = w.shape().n;
                let cols = w.len() / rows;
                let mut draw = |len| {
                    let mut x: Vec<F> = (0..len).map(|_| F::lit(StandardNormal.sample(rng))).collect();
                    mrsr_nn::normalize(&mut x);
                    x
                };
                let (u, v) = (draw(rows), draw(cols));
                spectral.push(SpectralState { weight: conv.weight, u, v });
                spectral.len() - 1
            });
            Layer { conv, sn }
        };
        let down = (1..=d)
            .map(|i| layer(&mut params, name(), (config.width(i - 1), config.width(i), 4), DOWN, &mut rng))
            .collect();
        let up = (1..=d)
            .map(|i| layer(&mut params, name(), (config.width(d - i + 1), config.width(d - i), 3), SAME3, &mut rng))
            .collect();
        let head = [
            layer(&mut params, name(), (b, b, 3), SAME3, &mut rng),
            layer(&mut params, name(), (b, b, 3), SAME3, &mut rng),
        ];
        let conv_out = Conv::push(&mut params, &name(), (b, 1, 3), SAME3, true, Init::FanInUniform, &mut rng);
        let mut disc = Discriminator { config: config.clone(), params, spectral, conv_in, down, up, head, conv_out };
        disc.refresh_spectral(SN_INIT_ITERATIONS);
        Ok(disc)
    }

    /// Rebuild from named parameters and spectral vectors (see
    /// [`Discriminator::spectral_named`]).
    pub fn from_named(
        config: &DiscriminatorConfig,
        named: impl IntoIterator<Item = (String, Tensor<F>)>,
        spectral: impl IntoIterator<Item = (String, Tensor<F>)>,
    ) -> Result<Self, ModelError> {
        let mut d = Self::new(config, 0)?;
        load_named(&mut d.params, named)?;
        let mut seen = vec![[false; 2]; d.spectral.len()];
        for (name, t) in spectral {
            let (layer, which) = name
                .strip_suffix("_u")
                .map(|l| (l, 0))
                .or_else(|| name.strip_suffix("_v").map(|l| (l, 1)))
                .ok_or_else(|| ModelError::Params(format!("unexpected spectral tensor {name}")))?;
            let idx = d
                .spectral
                .iter()
                .position(|s| d.params.name(s.weight) == layer)
                .ok_or_else(|| ModelError::Params(format!("no spectral layer {layer}")))?;
            let slot = if which == 0 { &mut d.spectral[idx].u } else { &mut d.spectral[idx].v };
            if slot.len() != t.len() {
                return Err(ModelError::Params(format!("{name}: length {} expected {}", t.len(), slot.len())));
            }
            slot.copy_from_slice(t.data());
            seen[idx][which] = true;
        }
        if seen.iter().any(|s| !s[0] || !s[1]) {
            return Err(ModelError::Params("missing spectral-norm vectors".into()));
        }
        Ok(d)
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    /// Spectral vectors as named tensors, `<weight name>_u` and `_v`.
    pub fn spectral_named(&self) -> Vec<(String, Tensor<F>)> {
        self.spectral
            .iter()
            .flat_map(|s| {
                let name = self.params.name(s.weight);
                [
                    (format!("{name}_u"), Tensor::from_vec(Shape::vector(s.u.len()), s.u.clone())),
                    (format!("{name}_v"), Tensor::from_vec(Shape::vector(s.v.len()), s.v.clone())),
                ]
            })
            .collect()
    }

    /// Advance every power iteration by `iterations` steps against the
    /// current weights. Training calls this once per step.
    pub fn refresh_spectral(&mut self, iterations: usize) {
        for s in &mut self.spectral {
            mrsr_nn::power_iteration(self.params.get(s.weight), &mut s.u, &mut s.v, iterations);
        }
    }

    /// Current `sigma` estimate for each normalised weight.
    pub fn spectral_sigmas(&self) -> Vec<F> {
        self.spectral.iter().map(|s| mrsr_nn::kernels::bilinear_form(self.params.get(s.weight), &s.u, &s.v)).collect()
    }

    /// The weights actually used in the forward pass, by parameter name.
    pub fn effective_weights(&self) -> Vec<(String, Tensor<F>)> {
        self.spectral
            .iter()
            .map(|s| {
                let w = self.params.get(s.weight);
                let sigma = mrsr_nn::kernels::bilinear_form(w, &s.u, &s.v);
                (self.params.name(s.weight).to_string(), w.map(|x| x / sigma))
            })
            .collect()
    }

    fn layer<B: Backend<F>>(&self, bk: &mut B, l: &Layer, x: &B::Value) -> B::Value {
        let y = match l.sn {
            Some(i) => l.conv.apply_sn(bk, &self.params, &self.spectral[i].u, &self.spectral[i].v, x),
            None => l.conv.apply(bk, &self.params, x),
        };
        bk.leaky_relu(&y, F::lit(self.config.leaky_slope))
    }

    /// Unchecked forward pass: `(B, 1, H, W)` to logits `(B, 1, H, W)`.
    pub fn forward<B: Backend<F>>(&self, bk: &mut B, x: &B::Value) -> B::Value {
        let y = self.conv_in.apply(bk, &self.params, x);
        let mut h = bk.leaky_relu(&y, F::lit(self.config.leaky_slope));
        let mut skips = vec![h.clone()];
        for l in &self.down {
            h = self.layer(bk, l, &h);
            skips.push(h.clone());
        }
        skips.pop();
        for l in &self.up {
            let up = bk.upsample_bilinear2x(&h);
            let y = self.layer(bk, l, &up);
            h = bk.add(&y, &skips.pop().expect("one skip per stage"));
        }
        for l in &self.head {
            h = self.layer(bk, l, &h);
        }
        self.conv_out.apply(bk, &self.params, &h)
    }

    pub fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        let m = self.config.spatial_multiple();
        check_image(x, self.config.in_channels, m, m)?;
        Ok(self.forward(&mut Eval, x))
    }
}
