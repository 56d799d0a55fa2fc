//! Frozen convolutional feature extractors for perceptual loss.

use std::path::{Path, PathBuf};

use mrsr_nn::{Backend, ConvGeom, Eval, Float, ParamStore, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use sha2::{Digest, Sha256};

use super::LossError;
use crate::sr_models::FEATURE_GROUP;

/// Environment variable naming the VGG19 safetensors file.
pub const VGG19_WEIGHTS_ENV: &str = "MRSR_VGG19_WEIGHTS";

/// ImageNet channel statistics expected by the pretrained backbone.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// VGG19 `features` layout: conv widths with `0` marking a 2x2 max pool.
const VGG19_PLAN: [usize; 21] =
    [64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0];

/// Tap layers (pre-activation conv outputs) and their weights.
pub const VGG19_TAPS: [(&str, f64); 5] =
    [("conv1_2", 0.1), ("conv2_2", 0.1), ("conv3_4", 1.0), ("conv4_4", 1.0), ("conv5_4", 1.0)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3, stride 1, padding 1, with bias.
    Conv {
        cin: usize,
        cout: usize,
    },
    Relu,
    MaxPool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tap {
    pub name: String,
    /// Index into the layer list; the tap reads that layer's output.
    pub layer: usize,
    pub weight: f64,
}

/// How single-channel images are adapted to the backbone input.
#[derive(Clone, Debug, PartialEq)]
pub struct InputAdapter {
    /// Channel replication factor (1 keeps the image as is).
    pub replicate: usize,
    /// Per-channel `(x - mean) / std` after replication, if any.
    pub normalize: Option<(Vec<f64>, Vec<f64>)>,
}

impl InputAdapter {
    pub fn identity() -> Self {
        InputAdapter { replicate: 1, normalize: None }
    }

    pub fn imagenet_gray() -> Self {
        InputAdapter { replicate: 3, normalize: Some((IMAGENET_MEAN.to_vec(), IMAGENET_STD.to_vec())) }
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Conv { weight: usize, bias: usize },
    Relu,
    MaxPool,
}

/// A frozen feed-forward backbone with weighted L1 feature taps.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<F> {
    pub params: ParamStore<F>,
    layers: Vec<Layer>,
    taps: Vec<Tap>,
    adapter: InputAdapter,
    pools_before_last_tap: usize,
    /// SHA-256 of the weight file, when loaded from disk.
    pub weights_digest: Option<String>,
}

impl<F: Float> FeatureExtractor<F> {
    /// Build with fan-in uniform random weights. Parameters are named
    /// `features.{i}.weight` / `.bias` by layer index.
    pub fn random(specs: &[LayerSpec], taps: Vec<Tap>, adapter: InputAdapter, seed: u64) -> Result<Self, LossError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(FEATURE_GROUP);
        let mut layers = Vec::with_capacity(specs.len());
        let mut channels = adapter.replicate;
        if let Some((mean, std)) = &adapter.normalize {
            if mean.len() != channels || std.len() != channels || std.iter().any(|&s| s <= 0.0) {
                return Err(LossError::Extractor("normalisation statistics do not match channels".into()));
            }
        }
        for (i, spec) in specs.iter().enumerate() {
            layers.push(match *spec {
                LayerSpec::Conv { cin, cout } => {
                    if cin != channels {
                        return Err(LossError::Extractor(format!("layer {i} expects {cin} channels, gets {channels}")));
                    }
                    channels = cout;
                    let bound = 1.0 / ((cin * 9) as f64).sqrt();
                    let weight = params.push(
                        format!("features.{i}.weight"),
                        mrsr_nn::uniform(Shape::new(cout, cin, 3, 3), bound, &mut rng),
                    );
                    let bias = params
                        .push(format!("features.{i}.bias"), mrsr_nn::uniform(Shape::vector(cout), bound, &mut rng));
                    Layer::Conv { weight, bias }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool => Layer::MaxPool,
            });
        }
        let Some(last) = taps.iter().map(|t| t.layer).max() else {
            return Err(LossError::Extractor("no tap layers".into()));
        };
        if last >= layers.len() || taps.iter().any(|t| t.weight < 0.0 || !t.weight.is_finite()) {
            return Err(LossError::Extractor("tap layer out of range or negative weight".into()));
        }
        let pools_before_last_tap = layers[..=last].iter().filter(|l| matches!(l, Layer::MaxPool)).count();
        Ok(FeatureExtractor { params, layers, taps, adapter, pools_before_last_tap, weights_digest: None })
    }

    /// VGG19 with random weights (tests and smoke runs only).
    pub fn vgg19_random(seed: u64) -> Self {
        let (specs, taps) = vgg19_layout();
        Self::random(&specs, taps, InputAdapter::imagenet_gray(), seed).expect("static layout is valid")
    }

    /// VGG19 from a safetensors file with torchvision names
    /// (`features.{i}.weight`, `features.{i}.bias`).
    pub fn vgg19_from_file(path: &Path) -> Result<Self, LossError> {
        let bytes = std::fs::read(path).map_err(|source| LossError::WeightsIo { path: path.to_path_buf(), source })?;
        let mut ex = Self::vgg19_random(0);
        ex.load_safetensors(&bytes, path)?;
        ex.weights_digest = Some(hex::encode(Sha256::digest(&bytes)));
        Ok(ex)
    }

    /// Write the parameters as f32 safetensors with torchvision names.
    pub fn save_safetensors(&self, path: &Path) -> Result<(), LossError> {
        let bad = |reason: String| LossError::Weights { path: path.to_path_buf(), reason };
        let data: Vec<(String, Vec<u8>, Vec<usize>)> = self
            .params
            .iter()
            .map(|(n, t)| {
                let dims = if n.ends_with(".bias") { vec![t.len()] } else { t.shape().dims().to_vec() };
                let bytes = t.data().iter().flat_map(|v| (v.to_f64_lossless() as f32).to_le_bytes()).collect();
                (n.to_string(), bytes, dims)
            })
            .collect();
        let views = data
            .iter()
            .map(|(n, b, d)| TensorView::new(Dtype::F32, d.clone(), b).map(|v| (n.as_str(), v)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        let bytes = safetensors::serialize(views, None).map_err(|e| bad(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|source| LossError::WeightsIo { path: path.to_path_buf(), source })
    }

    fn load_safetensors(&mut self, bytes: &[u8], path: &Path) -> Result<(), LossError> {
        let bad = |reason: String| LossError::Weights { path: path.to_path_buf(), reason };
        let st = SafeTensors::deserialize(bytes).map_err(|e| bad(e.to_string()))?;
        for i in 0..self.params.len() {
            let name = self.params.name(i).to_string();
            let view = st.tensor(&name).map_err(|_| bad(format!("missing tensor {name}")))?;
            let want = self.params.get(i).shape();
            let dims = if name.ends_with(".bias") { vec![want.n] } else { want.dims().to_vec() };
            if view.shape() != dims.as_slice() {
                return Err(bad(format!("{name}: shape {:?}, expected {dims:?}", view.shape())));
            }
            let values: Vec<F> = match view.dtype() {
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| F::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                    .collect(),
                Dtype::F64 => {
                    view.data().chunks_exact(8).map(|c| F::lit(f64::from_le_bytes(c.try_into().unwrap()))).collect()
                }
                other => return Err(bad(format!("{name}: unsupported dtype {other:?}"))),
            };
            *self.params.get_mut(i) = Tensor::from_vec(want, values);
        }
        Ok(())
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    /// Smallest accepted side; the deepest tap must keep at least 2x2.
    pub fn min_side(&self) -> usize {
        (2usize << self.pools_before_last_tap).max(2)
    }

    /// Sides must be multiples of this so every pool divides evenly.
    pub fn side_multiple(&self) -> usize {
        1 << self.pools_before_last_tap
    }

    pub fn check_input(&self, s: Shape) -> Result<(), LossError> {
        let (min, m) = (self.min_side(), self.side_multiple());
        if s.c != 1 {
            return Err(LossError::Shape(format!("perceptual loss expects 1 channel, got {s:?}")));
        }
        if s.h < min || s.w < min || !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) {
            return Err(LossError::Shape(format!(
                "perceptual loss needs sides >= {min} and divisible by {m}, got {}x{}",
                s.h, s.w
            )));
        }
        Ok(())
    }

    /// Tap activations, in tap order.
    pub fn features<B: Backend<F>>(&self, bk: &mut B, x: &B::Value) -> Vec<B::Value> {
        let mut h = if self.adapter.replicate > 1 { bk.repeat_channels(x, self.adapter.replicate) } else { x.clone() };
        if let Some((mean, std)) = &self.adapter.normalize {
            let scale: Vec<F> = std.iter().map(|&s| F::lit(1.0 / s)).collect();
            let shift: Vec<F> = mean.iter().zip(std).map(|(&m, &s)| F::lit(-m / s)).collect();
            h = bk.channel_affine(&h, &scale, &shift);
        }
        let last = self.taps.iter().map(|t| t.layer).max().expect("validated");
        let mut by_layer = vec![None; last + 1];
        for (i, layer) in self.layers[..=last].iter().enumerate() {
            h = match layer {
                Layer::Conv { weight, bias } => {
                    let w = bk.param(self.params.key(*weight), self.params.get(*weight));
                    let b = bk.param(self.params.key(*bias), self.params.get(*bias));
                    bk.conv2d(&h, &w, Some(&b), ConvGeom { stride: 1, pad: 1 })
                }
                Layer::Relu => bk.relu(&h),
                Layer::MaxPool => bk.max_pool2x2(&h),
            };
            if self.taps.iter().any(|t| t.layer == i) {
                by_layer[i] = Some(h.clone());
            }
        }
        self.taps.iter().map(|t| by_layer[t.layer].clone().expect("tap recorded")).collect()
    }

    pub fn features_eval(&self, x: &Tensor<F>) -> Vec<Tensor<F>> {
        self.features(&mut Eval, x)
    }

    /// `sum_t w_t * L1(features_t(sr), target_t)` with precomputed target features.
    pub fn loss_against<B: Backend<F>>(&self, bk: &mut B, sr: &B::Value, target: &[Tensor<F>]) -> B::Value {
        let feats = self.features(bk, sr);
        let terms: Vec<(B::Value, F)> = feats
            .iter()
            .zip(target)
            .zip(&self.taps)
            .map(|((f, t), tap)| {
                let t = bk.input(t.clone());
                (bk.l1_mean(f, &t), F::lit(tap.weight))
            })
            .collect();
        let refs: Vec<(&B::Value, F)> = terms.iter().map(|(v, w)| (v, *w)).collect();
        bk.weighted_sum(&refs)
    }
}

/// Layer list and the five tap points of VGG19's `features` stack.
pub fn vgg19_layout() -> (Vec<LayerSpec>, Vec<Tap>) {
    let mut specs = Vec::new();
    let mut names = Vec::new();
    let (mut cin, mut block, mut conv) = (3, 1, 0);
    for &width in &VGG19_PLAN {
        if width == 0 {
            specs.push(LayerSpec::MaxPool);
            block += 1;
            conv = 0;
        } else {
            conv += 1;
            names.push((format!("conv{block}_{conv}"), specs.len()));
            specs.push(LayerSpec::Conv { cin, cout: width });
            specs.push(LayerSpec::Relu);
            cin = width;
        }
    }
    let taps = VGG19_TAPS
        .iter()
        .map(|(name, weight)| {
            let layer = names.iter().find(|(n, _)| n == name).expect("tap exists").1;
            Tap { name: name.to_string(), layer, weight: *weight }
        })
        .collect();
    (specs, taps)
}

/// Resolve the VGG19 weight file: explicit path first, then the environment.
pub fn resolve_vgg19_path(configured: Option<&Path>) -> Option<PathBuf> {
    configured.map(Path::to_path_buf).or_else(|| std::env::var_os(VGG19_WEIGHTS_ENV).map(PathBuf::from))
}
