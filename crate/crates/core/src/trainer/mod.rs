//! Adversarial training loop, checkpoints and inference.

mod checkpoint;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use mrsr_nn::{Adam, AdamConfig, Backend, Eval, Gradients, ParamStore, Tape, Tensor};
use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data_pipeline::{DataError, Dataset, SlicePair, SliceRef, Split};
use crate::losses::{FeatureExtractor, LossError, LossWeights};
use crate::sr_models::{
    image_to_tensor, tensor_to_image, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelError,
    DISCRIMINATOR_GROUP, GENERATOR_GROUP,
};

pub use checkpoint::{checkpoint_path, latest_checkpoint, Archive, CHECKPOINT_FORMAT};

pub const LOSS_LOG: &str = "loss_log.csv";
pub const RUN_META: &str = "run_meta.json";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("training diverged: {0}")]
    NonFinite(Box<NanDiagnostic>),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad inference input: {0}")]
    Input(String),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, TrainError> {
    Err(TrainError::Config(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub loss_weights: LossWeights,
    /// Side of random aligned HR crops (LR crops are a quarter of it).
    /// `None` trains on whole slices.
    pub crop_size: Option<usize>,
    /// Keep an exponential moving average of generator weights.
    pub ema: bool,
    pub ema_decay: f64,
    /// Global L2 gradient-norm limit per network.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            iterations: 300_000,
            batch_size: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            seed: 0,
            checkpoint_every: 5000,
            log_every: 100,
            loss_weights: LossWeights::default(),
            crop_size: None,
            ema: false,
            ema_decay: 0.999,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return config_err(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.iterations == 0 || self.batch_size == 0 || self.checkpoint_every == 0 || self.log_every == 0 {
            return config_err("iterations, batch_size, checkpoint_every and log_every must be at least 1");
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return config_err(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return config_err("adam_eps must be positive");
        }
        self.loss_weights.validate().map_err(TrainError::Config)?;
        if let Some(c) = self.crop_size {
            if c < 64 || c % 16 != 0 {
                return config_err(format!("crop_size {c} must be >= 64 and a multiple of 16"));
            }
        }
        if self.ema && !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return config_err(format!("ema_decay {} outside (0, 1)", self.ema_decay));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return config_err(format!("grad_clip {c} must be positive"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    /// The fields that must match for a resumed run to continue the same
    /// trajectory; schedule lengths and logging cadence may change.
    fn trajectory_key(&self) -> Self {
        TrainConfig { iterations: 0, checkpoint_every: 1, log_every: 1, ..self.clone() }
    }
}

/// Derive an independent seed for a named consumer.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub pixel: f64,
    pub perceptual: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub total_g: f64,
}

impl LossRecord {
    fn as_row(&self) -> [f64; 6] {
        [self.iteration as f64, self.pixel, self.perceptual, self.adv_g, self.adv_d, self.total_g]
    }
}

/// Snapshot written when a step produces a non-finite value.
#[derive(Clone, Debug, PartialEq)]
pub struct NanDiagnostic {
    pub iteration: u64,
    pub phase: &'static str,
    pub pixel: f64,
    pub perceptual: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub total_g: f64,
    pub grad_norm_g: f64,
    pub grad_norm_d: f64,
}

impl fmt::Display for NanDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "non-finite value in {} step at iteration {}: pixel={} perceptual={} adv_g={} adv_d={} total_g={} \
             |grad_G|={} |grad_D|={}",
            self.phase,
            self.iteration,
            self.pixel,
            self.perceptual,
            self.adv_g,
            self.adv_d,
            self.total_g,
            self.grad_norm_g,
            self.grad_norm_d
        )
    }
}

/// Per-step values beyond the logged losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub record: LossRecord,
    pub grad_norm_g: f64,
    pub grad_norm_d: f64,
    /// Norm of generator gradient produced by the discriminator step; zero
    /// because the fake batch is detached.
    pub generator_grad_in_d_step: f64,
}

/// A training batch of aligned `(B, 1, h, w)` and `(B, 1, 4h, 4w)` tensors.
#[derive(Clone, Debug)]
pub struct Batch {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
}

impl Batch {
    pub fn from_pairs(pairs: &[SlicePair]) -> Result<Self, TrainError> {
        for p in pairs {
            p.validate()?;
        }
        let lr: Vec<_> = pairs.iter().map(|p| image_to_tensor(p.lr.view())).collect();
        let hr: Vec<_> = pairs.iter().map(|p| image_to_tensor(p.hr.view())).collect();
        if lr.windows(2).any(|w| w[0].shape() != w[1].shape()) {
            return config_err("batch pairs have different sizes");
        }
        Ok(Batch { lr: Tensor::stack_batch(&lr), hr: Tensor::stack_batch(&hr) })
    }
}

/// Random-access training samples.
pub trait PairSource {
    fn len(&self) -> usize;
    fn pair(&self, index: usize) -> Result<SlicePair, TrainError>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PairSource for Vec<SlicePair> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn pair(&self, index: usize) -> Result<SlicePair, TrainError> {
        Ok(self[index].clone())
    }
}

/// Training slices of a prepared dataset, read from disk on demand.
pub struct SplitSource<'a> {
    dataset: &'a Dataset,
    refs: Vec<SliceRef>,
}

impl<'a> SplitSource<'a> {
    pub fn new(dataset: &'a Dataset, split: Split) -> Self {
        SplitSource { dataset, refs: dataset.refs(split) }
    }
}

impl PairSource for SplitSource<'_> {
    fn len(&self) -> usize {
        self.refs.len()
    }

    fn pair(&self, index: usize) -> Result<SlicePair, TrainError> {
        Ok(self.dataset.load_pair(&self.refs[index])?)
    }
}

/// Uniform sampling with replacement, plus an aligned random crop when
/// `crop_size` is smaller than the slice.
pub fn sample_batch(rng: &mut ChaCha8Rng, source: &dyn PairSource, cfg: &TrainConfig) -> Result<Batch, TrainError> {
    let mut pairs = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let mut p = source.pair(rng.random_range(0..source.len()))?;
        if let Some(c) = cfg.crop_size {
            let (lh, lw) = p.lr.dim();
            let lc = c / 4;
            if lc < lh || lc < lw {
                if lc > lh || lc > lw {
                    return config_err(format!("crop_size {c} exceeds slice {}x{}", p.hr.dim().0, p.hr.dim().1));
                }
                let y = rng.random_range(0..=lh - lc);
                let x = rng.random_range(0..=lw - lc);
                p.lr = p.lr.slice(s![y..y + lc, x..x + lc]).to_owned();
                p.hr = p.hr.slice(s![4 * y..4 * (y + lc), 4 * x..4 * (x + lc)]).to_owned();
            }
        }
        pairs.push(p);
    }
    Batch::from_pairs(&pairs)
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub iteration: u64,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub ema: Option<ParamStore<f32>>,
    pub rng: ChaCha8Rng,
    pub loss_history: Vec<LossRecord>,
}

impl TrainState {
    /// Fresh state: both networks initialised from seeds derived from
    /// `cfg.seed`. There is no warm start.
    pub fn new(cfg: &TrainConfig, gcfg: &GeneratorConfig, dcfg: &DiscriminatorConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let generator = Generator::new(gcfg, derive_seed(cfg.seed, "generator"))?;
        let discriminator = Discriminator::new(dcfg, derive_seed(cfg.seed, "discriminator"))?;
        let opt_g = Adam::new(cfg.adam(), &generator.params);
        let opt_d = Adam::new(cfg.adam(), &discriminator.params);
        let ema = cfg.ema.then(|| generator.params.clone());
        Ok(TrainState {
            iteration: 0,
            generator,
            discriminator,
            opt_g,
            opt_d,
            ema,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sampler")),
            loss_history: Vec::new(),
        })
    }

    /// Generator used for inference: the EMA weights when tracked.
    pub fn inference_generator(&self) -> Generator<f32> {
        let mut g = self.generator.clone();
        if let Some(ema) = &self.ema {
            g.params = ema.clone();
        }
        g
    }

    pub fn to_archive(&self, cfg: &TrainConfig, extractor_digest: Option<&str>) -> Archive {
        let mut a = Archive::default();
        let gp = &self.generator.params;
        let dp = &self.discriminator.params;
        for (n, t) in gp.iter() {
            a.put(format!("generator/{n}"), t);
        }
        if let Some(ema) = &self.ema {
            for (n, t) in ema.iter() {
                a.put(format!("generator_ema/{n}"), t);
            }
        }
        for (n, t) in dp.iter() {
            a.put(format!("discriminator/{n}"), t);
        }
        for (n, t) in self.discriminator.spectral_named() {
            a.put(format!("discriminator_sn/{n}"), &t);
        }
        for (tag, opt, store) in [("adam_g", &self.opt_g, gp), ("adam_d", &self.opt_d, dp)] {
            let (m, v) = opt.moments();
            for i in 0..store.len() {
                a.put(format!("{tag}/m/{}", store.name(i)), &m[i]);
                a.put(format!("{tag}/v/{}", store.name(i)), &v[i]);
            }
            a.meta.insert(format!("{tag}_steps"), opt.steps().to_string());
        }
        let rows: Vec<f64> = self.loss_history.iter().flat_map(LossRecord::as_row).collect();
        a.put_f64("loss_history", vec![self.loss_history.len(), 6], &rows);
        let json = |v: &dyn erased::Json| v.json();
        a.meta.insert("format".into(), CHECKPOINT_FORMAT.into());
        a.meta.insert("iteration".into(), self.iteration.to_string());
        a.meta.insert("generator_config".into(), json(self.generator.config()));
        a.meta.insert("discriminator_config".into(), json(self.discriminator.config()));
        a.meta.insert("train_config".into(), json(cfg));
        a.meta.insert("rng_seed".into(), hex::encode(self.rng.get_seed()));
        a.meta.insert("rng_stream".into(), self.rng.get_stream().to_string());
        a.meta.insert("rng_word_pos".into(), self.rng.get_word_pos().to_string());
        if let Some(d) = extractor_digest {
            a.meta.insert("feature_extractor_sha256".into(), d.into());
        }
        a
    }

    pub fn save(&self, path: &Path, cfg: &TrainConfig, extractor_digest: Option<&str>) -> Result<(), TrainError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| TrainError::Io { path: dir.to_path_buf(), source })?;
        }
        self.to_archive(cfg, extractor_digest).save(path)
    }

    /// Restore a checkpoint for resuming. The stored model configs must equal
    /// the given ones, and the training config may differ only in
    /// `iterations`, `checkpoint_every` and `log_every`.
    pub fn load(
        path: &Path,
        cfg: &TrainConfig,
        gcfg: &GeneratorConfig,
        dcfg: &DiscriminatorConfig,
    ) -> Result<Self, TrainError> {
        let a = Archive::load(path)?;
        let bad = |reason: String| TrainError::Checkpoint { path: path.to_path_buf(), reason };
        let stored_g: GeneratorConfig = parse_json(&a, path, "generator_config")?;
        let stored_d: DiscriminatorConfig = parse_json(&a, path, "discriminator_config")?;
        let stored_t: TrainConfig = parse_json(&a, path, "train_config")?;
        if &stored_g != gcfg || &stored_d != dcfg {
            return Err(bad("model config differs from the checkpoint".into()));
        }
        if stored_t.trajectory_key() != cfg.trajectory_key() {
            return Err(bad("training config differs from the checkpoint beyond iterations and cadence".into()));
        }
        let generator = Generator::from_named(gcfg, a.with_prefix("generator/"))?;
        let discriminator =
            Discriminator::from_named(dcfg, a.with_prefix("discriminator/"), a.with_prefix("discriminator_sn/"))?;
        let restore = |tag: &str, store: &ParamStore<f32>| -> Result<Adam<f32>, TrainError> {
            let mut opt = Adam::new(cfg.adam(), store);
            let mut m = Vec::with_capacity(store.len());
            let mut v = Vec::with_capacity(store.len());
            for i in 0..store.len() {
                let get = |kind: &str| {
                    let name = format!("{tag}/{kind}/{}", store.name(i));
                    a.get(&name)
                        .filter(|t| t.shape() == store.get(i).shape())
                        .ok_or_else(|| bad(format!("missing or misshapen {name}")))
                };
                m.push(get("m")?);
                v.push(get("v")?);
            }
            opt.restore(a.meta_parse(path, &format!("{tag}_steps"))?, m, v);
            Ok(opt)
        };
        let opt_g = restore("adam_g", &generator.params)?;
        let opt_d = restore("adam_d", &discriminator.params)?;
        let ema = if cfg.ema {
            let mut store = generator.params.clone();
            let named = a.with_prefix("generator_ema/");
            if named.is_empty() {
                return Err(bad("EMA enabled but the checkpoint has no EMA weights".into()));
            }
            crate::sr_models::load_named(&mut store, named)?;
            Some(store)
        } else {
            None
        };
        let seed: [u8; 32] = hex::decode(a.meta(path, "rng_seed")?)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| bad("malformed rng_seed".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(a.meta_parse(path, "rng_stream")?);
        rng.set_word_pos(a.meta_parse(path, "rng_word_pos")?);
        let (dims, rows) = a.get_f64("loss_history").ok_or_else(|| bad("missing loss_history".into()))?;
        if dims.len() != 2 || dims[1] != 6 {
            return Err(bad("loss_history must be [n, 6]".into()));
        }
        let loss_history = rows
            .chunks_exact(6)
            .map(|r| LossRecord {
                iteration: r[0] as u64,
                pixel: r[1],
                perceptual: r[2],
                adv_g: r[3],
                adv_d: r[4],
                total_g: r[5],
            })
            .collect();
        Ok(TrainState {
            iteration: a.meta_parse(path, "iteration")?,
            generator,
            discriminator,
            opt_g,
            opt_d,
            ema,
            rng,
            loss_history,
        })
    }
}

mod erased {
    /// Object-safe JSON rendering for the metadata helpers.
    pub trait Json {
        fn json(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn json(&self) -> String {
            serde_json::to_string(self).expect("config serialises")
        }
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(a: &Archive, path: &Path, key: &str) -> Result<T, TrainError> {
    serde_json::from_str(a.meta(path, key)?)
        .map_err(|e| TrainError::Checkpoint { path: path.to_path_buf(), reason: format!("{key}: {e}") })
}

fn clip(grads: &mut Gradients<f32>, group: u32, max_norm: Option<f64>) {
    let Some(max) = max_norm else { return };
    let norm = grads.group_norm(group) as f64;
    if norm > max {
        let scale = (max / norm) as f32;
        for (_, g) in grads.params.iter_mut().filter(|(k, _)| k.group == group) {
            *g = g.map(|x| x * scale);
        }
    }
}

/// One generator update followed by one discriminator update.
///
/// The generator minimises `w_pix * L1 + w_perc * perceptual + w_adv *
/// relativistic G loss`, with real logits from the current discriminator as
/// constants. The discriminator then sees the detached generator output.
/// Terms with zero weight are not computed; with a zero adversarial weight
/// the discriminator is left untouched.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    cfg: &TrainConfig,
    extractor: Option<&FeatureExtractor<f32>>,
) -> Result<StepStats, TrainError> {
    let w = cfg.loss_weights;
    let iteration = state.iteration + 1;
    let adversarial = w.adversarial > 0.0;
    if adversarial {
        state.discriminator.refresh_spectral(1);
    }

    let mut tape = Tape::new(&[GENERATOR_GROUP]);
    let lr = tape.input(batch.lr.clone());
    let sr = state.generator.forward(&mut tape, &lr);
    let hr = tape.input(batch.hr.clone());
    let pixel_node = tape.l1_mean(&sr, &hr);
    let mut terms = vec![(pixel_node, w.pixel as f32)];
    let mut perceptual = 0.0;
    if w.perceptual > 0.0 {
        let ex =
            extractor.ok_or_else(|| TrainError::Config("perceptual weight > 0 needs a feature extractor".into()))?;
        ex.check_input(batch.hr.shape())?;
        let target = ex.features_eval(&batch.hr);
        let node = ex.loss_against(&mut tape, &sr, &target);
        perceptual = tape.value(&node).item() as f64;
        terms.push((node, w.perceptual as f32));
    }
    let mut adv_g = 0.0;
    if adversarial {
        let real = state.discriminator.forward(&mut Eval, &batch.hr);
        let fake = state.discriminator.forward(&mut tape, &sr);
        let real = tape.input(real);
        let node = tape.relativistic_bce(&fake, &real);
        adv_g = tape.value(&node).item() as f64;
        terms.push((node, w.adversarial as f32));
    }
    let refs: Vec<_> = terms.iter().map(|(n, w)| (n, *w)).collect();
    let total = tape.weighted_sum(&refs);
    let pixel = tape.value(&pixel_node).item() as f64;
    let total_g = tape.value(&total).item() as f64;
    let sr_detached = tape.value(&sr).clone();
    let mut grads = tape.backward(total);
    let grad_norm_g = grads.group_norm(GENERATOR_GROUP) as f64;

    let mut diag = NanDiagnostic {
        iteration,
        phase: "generator",
        pixel,
        perceptual,
        adv_g,
        adv_d: f64::NAN,
        total_g,
        grad_norm_g,
        grad_norm_d: f64::NAN,
    };
    if ![pixel, perceptual, adv_g, total_g, grad_norm_g].iter().all(|v| v.is_finite()) {
        return Err(TrainError::NonFinite(Box::new(diag)));
    }
    clip(&mut grads, GENERATOR_GROUP, cfg.grad_clip);
    state.opt_g.step(&mut state.generator.params, &grads);
    if let Some(ema) = &mut state.ema {
        let d = cfg.ema_decay as f32;
        for i in 0..ema.len() {
            let p = state.generator.params.get(i);
            *ema.get_mut(i) = ema.get(i).zip_map(p, |e, x| d * e + (1.0 - d) * x);
        }
    }

    let (mut adv_d, mut grad_norm_d, mut leak) = (0.0, 0.0, 0.0);
    if adversarial {
        let mut tape = Tape::new(&[DISCRIMINATOR_GROUP]);
        let real_x = tape.input(batch.hr.clone());
        let fake_x = tape.input(sr_detached);
        let real = state.discriminator.forward(&mut tape, &real_x);
        let fake = state.discriminator.forward(&mut tape, &fake_x);
        let loss = tape.relativistic_bce(&real, &fake);
        adv_d = tape.value(&loss).item() as f64;
        let mut grads = tape.backward(loss);
        grad_norm_d = grads.group_norm(DISCRIMINATOR_GROUP) as f64;
        leak = grads.group_norm(GENERATOR_GROUP) as f64;
        if !(adv_d.is_finite() && grad_norm_d.is_finite()) {
            diag.phase = "discriminator";
            diag.adv_d = adv_d;
            diag.grad_norm_d = grad_norm_d;
            return Err(TrainError::NonFinite(Box::new(diag)));
        }
        clip(&mut grads, DISCRIMINATOR_GROUP, cfg.grad_clip);
        state.opt_d.step(&mut state.discriminator.params, &grads);
    }

    let record = LossRecord { iteration, pixel, perceptual, adv_g, adv_d, total_g };
    state.iteration = iteration;
    state.loss_history.push(record);
    Ok(StepStats { record, grad_norm_g, grad_norm_d, generator_grad_in_d_step: leak })
}

/// Configuration and frozen inputs of a training run.
pub struct TrainSetup<'a> {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Required when the perceptual weight is positive.
    pub extractor: Option<&'a FeatureExtractor<f32>>,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub final_checkpoint: PathBuf,
}

fn write_loss_log(path: &Path, history: &[LossRecord]) -> Result<std::fs::File, TrainError> {
    let io = |source| TrainError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    let mut text = String::from("iteration,pixel,perceptual,adv_g,adv_d,total_g\n");
    for r in history {
        text.push_str(&loss_row(r));
    }
    f.write_all(text.as_bytes()).map_err(io)?;
    Ok(f)
}

fn loss_row(r: &LossRecord) -> String {
    format!("{},{},{},{},{},{}\n", r.iteration, r.pixel, r.perceptual, r.adv_g, r.adv_d, r.total_g)
}

/// Parse a loss log written by [`train`].
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>, TrainError> {
    let bad = |reason: String| TrainError::Checkpoint { path: path.to_path_buf(), reason };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    rdr.deserialize().map(|r| r.map_err(|e| bad(e.to_string()))).collect()
}

#[derive(Serialize)]
struct RunMeta<'a> {
    train: &'a TrainConfig,
    generator: &'a GeneratorConfig,
    discriminator: &'a DiscriminatorConfig,
    generator_parameters: usize,
    discriminator_parameters: usize,
    optimizer: &'static str,
    update_order: &'static str,
    spectral_norm_power_iterations_per_step: usize,
    perceptual_taps: Vec<(String, f64)>,
    perceptual_input: &'static str,
    feature_extractor_sha256: Option<&'a str>,
    relativistic_expectation: &'static str,
}

/// Run `setup.train.iterations` steps, resuming from `resume` when given.
/// Writes `checkpoints/iter_<n>.safetensors` every `checkpoint_every`
/// steps and at the end, `loss_log.csv`, and `run_meta.json`.
pub fn train(
    setup: &TrainSetup,
    source: &dyn PairSource,
    run_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let cfg = &setup.train;
    cfg.validate()?;
    if source.is_empty() {
        return config_err("no training slices");
    }
    if cfg.loss_weights.perceptual > 0.0 && setup.extractor.is_none() {
        return config_err("perceptual weight > 0 needs a feature extractor");
    }
    let mut state = match resume {
        Some(p) => TrainState::load(p, cfg, &setup.generator, &setup.discriminator)?,
        None => TrainState::new(cfg, &setup.generator, &setup.discriminator)?,
    };
    if state.iteration > cfg.iterations {
        return config_err(format!(
            "checkpoint is at iteration {}, beyond the {} requested",
            state.iteration, cfg.iterations
        ));
    }
    std::fs::create_dir_all(run_dir.join("checkpoints"))
        .map_err(|source| TrainError::Io { path: run_dir.to_path_buf(), source })?;
    let digest = setup.extractor.and_then(|e| e.weights_digest.as_deref());
    let meta = RunMeta {
        train: cfg,
        generator: &setup.generator,
        discriminator: &setup.discriminator,
        generator_parameters: state.generator.parameter_count(),
        discriminator_parameters: state.discriminator.parameter_count(),
        optimizer: "adam, no weight decay, constant learning rate",
        update_order: "generator then discriminator, one step each",
        spectral_norm_power_iterations_per_step: 1,
        perceptual_taps: setup
            .extractor
            .map(|e| e.taps().iter().map(|t| (t.name.clone(), t.weight)).collect())
            .unwrap_or_default(),
        perceptual_input: "gray replicated to 3 channels, ImageNet mean/std",
        feature_extractor_sha256: digest,
        relativistic_expectation: "opponent mean over batch and all pixels",
    };
    let meta_path = run_dir.join(RUN_META);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("serialisable") + "\n")
        .map_err(|source| TrainError::Io { path: meta_path, source })?;
    let log_path = run_dir.join(LOSS_LOG);
    let mut log = write_loss_log(&log_path, &state.loss_history)?;

    while state.iteration < cfg.iterations {
        let batch = sample_batch(&mut state.rng, source, cfg)?;
        let stats = train_step(&mut state, &batch, cfg, setup.extractor)?;
        let r = stats.record;
        log.write_all(loss_row(&r).as_bytes()).map_err(|source| TrainError::Io { path: log_path.clone(), source })?;
        if r.iteration % cfg.log_every == 0 {
            log::info!(
                "iter {}: pixel {:.5} perceptual {:.5} adv_g {:.5} adv_d {:.5} total_g {:.5}",
                r.iteration,
                r.pixel,
                r.perceptual,
                r.adv_g,
                r.adv_d,
                r.total_g
            );
        }
        if r.iteration % cfg.checkpoint_every == 0 && r.iteration != cfg.iterations {
            state.save(&checkpoint_path(run_dir, r.iteration), cfg, digest)?;
        }
    }
    let final_checkpoint = checkpoint_path(run_dir, state.iteration);
    state.save(&final_checkpoint, cfg, digest)?;
    Ok(TrainOutcome { state, final_checkpoint })
}

/// Load the generator for inference. EMA weights are preferred when the
/// checkpoint has them. With `expected`, the stored config must match.
pub fn load_generator(path: &Path, expected: Option<&GeneratorConfig>) -> Result<Generator<f32>, TrainError> {
    let a = Archive::load(path)?;
    let cfg: GeneratorConfig = parse_json(&a, path, "generator_config")?;
    if let Some(e) = expected {
        if e != &cfg {
            return Err(TrainError::Checkpoint {
                path: path.to_path_buf(),
                reason: "generator config differs from the checkpoint".into(),
            });
        }
    }
    let prefix = if a.has_prefix("generator_ema/") { "generator_ema/" } else { "generator/" };
    Ok(Generator::from_named(&cfg, a.with_prefix(prefix))?)
}

/// x4 super-resolution of one LR image with values in `[0, 1]`. The output
/// is clamped to `[0, 1]`.
pub fn infer(generator: &Generator<f32>, lr: ArrayView2<f32>) -> Result<Array2<f32>, TrainError> {
    if !lr.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
        return Err(TrainError::Input("input values must be finite and within [0, 1]".into()));
    }
    let out = generator.predict(&image_to_tensor(lr))?;
    Ok(tensor_to_image(&out, 0).mapv(|v| v.clamp(0.0, 1.0)))
}
