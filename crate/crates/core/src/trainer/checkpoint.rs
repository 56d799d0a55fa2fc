//! Checkpoint container.
//!
//! A checkpoint is one safetensors file. Tensor names are prefixed by role:
//!
//! | prefix | content |
//! |---|---|
//! | `generator/` | generator parameters |
//! | `generator_ema/` | EMA generator parameters (only when EMA is on) |
//! | `discriminator/` | discriminator parameters |
//! | `discriminator_sn/` | spectral-norm `u`/`v` vectors |
//! | `adam_g/m/`, `adam_g/v/`, `adam_d/m/`, `adam_d/v/` | Adam moments |
//! | `loss_history` | `f64 [n, 6]`: iteration, pixel, perceptual, adv_g, adv_d, total_g |
//!
//! String metadata carries the format tag, iteration, the three configs as
//! JSON, Adam step counts, and the sampler RNG state.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use mrsr_nn::{Shape, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use super::TrainError;

pub const CHECKPOINT_FORMAT: &str = "mrsr-checkpoint/1";

/// Named tensors plus string metadata, as held in memory.
#[derive(Clone, Debug, Default)]
pub struct Archive {
    tensors: BTreeMap<String, (Dtype, Vec<usize>, Vec<u8>)>,
    pub meta: BTreeMap<String, String>,
}

fn bad(path: &Path, reason: impl Into<String>) -> TrainError {
    TrainError::Checkpoint { path: path.to_path_buf(), reason: reason.into() }
}

fn tensor_dims(t: &Tensor<f32>) -> Vec<usize> {
    let s = t.shape();
    if (s.c, s.h, s.w) == (1, 1, 1) {
        vec![s.n]
    } else {
        s.dims().to_vec()
    }
}

impl Archive {
    pub fn put(&mut self, name: impl Into<String>, t: &Tensor<f32>) {
        let bytes = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        self.tensors.insert(name.into(), (Dtype::F32, tensor_dims(t), bytes));
    }

    pub fn put_f64(&mut self, name: impl Into<String>, dims: Vec<usize>, data: &[f64]) {
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.tensors.insert(name.into(), (Dtype::F64, dims, bytes));
    }

    pub fn get(&self, name: &str) -> Option<Tensor<f32>> {
        let (dtype, dims, bytes) = self.tensors.get(name)?;
        if *dtype != Dtype::F32 {
            return None;
        }
        let shape = Shape::from_dims(dims)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Some(Tensor::from_vec(shape, data))
    }

    pub fn get_f64(&self, name: &str) -> Option<(Vec<usize>, Vec<f64>)> {
        let (dtype, dims, bytes) = self.tensors.get(name)?;
        if *dtype != Dtype::F64 {
            return None;
        }
        Some((dims.clone(), bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()))
    }

    /// All f32 tensors under `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.tensors
            .keys()
            .filter_map(|k| k.strip_prefix(prefix).map(|rest| (rest.to_string(), self.get(k))))
            .filter_map(|(k, t)| t.map(|t| (k, t)))
            .collect()
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.keys().any(|k| k.starts_with(prefix))
    }

    pub fn meta(&self, path: &Path, key: &str) -> Result<&str, TrainError> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| bad(path, format!("missing metadata {key}")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, path: &Path, key: &str) -> Result<T, TrainError> {
        self.meta(path, key)?.parse().map_err(|_| bad(path, format!("metadata {key} is malformed")))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let views: Vec<(&str, TensorView)> = self
            .tensors
            .iter()
            .map(|(n, (d, dims, b))| TensorView::new(*d, dims.clone(), b).map(|v| (n.as_str(), v)))
            .collect::<Result<_, _>>()
            .map_err(|e| bad(path, e.to_string()))?;
        let meta: HashMap<String, String> = self.meta.clone().into_iter().collect();
        let bytes = safetensors::serialize(views, Some(meta)).map_err(|e| bad(path, e.to_string()))?;
        let tmp = path.with_extension("safetensors.tmp");
        let io = |source| TrainError::Io { path: path.to_path_buf(), source };
        std::fs::write(&tmp, bytes).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(path, e.to_string()))?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(path, e.to_string()))?;
        let meta: BTreeMap<String, String> = header.metadata().clone().unwrap_or_default().into_iter().collect();
        if meta.get("format").map(String::as_str) != Some(CHECKPOINT_FORMAT) {
            return Err(bad(path, format!("not a {CHECKPOINT_FORMAT} file")));
        }
        let tensors =
            st.iter().map(|(name, v)| (name.to_string(), (v.dtype(), v.shape().to_vec(), v.data().to_vec()))).collect();
        Ok(Archive { tensors, meta })
    }
}

/// `checkpoints/iter_<n>.safetensors` under a run directory.
pub fn checkpoint_path(run_dir: &Path, iteration: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("iter_{iteration}.safetensors"))
}

/// The checkpoint with the highest iteration in a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Option<PathBuf> {
    let dir = std::fs::read_dir(run_dir.join("checkpoints")).ok()?;
    dir.filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n: u64 = name.strip_prefix("iter_")?.strip_suffix(".safetensors")?.parse().ok()?;
            Some((n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
        .map(|(_, p)| p)
}
