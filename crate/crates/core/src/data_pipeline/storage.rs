//! Slice-pair files.
//!
//! Each array is stored as `<subject>_<slice:03>_{hr,lr}.f32`: a 16-byte
//! header (`b"MRSL"`, then little-endian `u32` version = 1, height, width)
//! followed by `height * width` little-endian `f32` values in row-major
//! order.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::manifest::{DatasetManifest, SliceRef};
use super::{DataError, Split};

pub const SLICE_MAGIC: [u8; 4] = *b"MRSL";
pub const SLICE_VERSION: u32 = 1;
pub const SLICES_DIR: &str = "slices";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceKind {
    Hr,
    Lr,
}

impl SliceKind {
    fn tag(self) -> &'static str {
        match self {
            SliceKind::Hr => "hr",
            SliceKind::Lr => "lr",
        }
    }
}

pub fn slice_file_name(slice: &SliceRef, kind: SliceKind) -> String {
    format!("{}_{}.f32", slice.image_id(), kind.tag())
}

pub fn write_slice(path: &Path, img: &Array2<f32>) -> Result<(), DataError> {
    let io = |source| DataError::Io { path: path.to_path_buf(), source };
    let (h, w) = img.dim();
    let mut buf = Vec::with_capacity(16 + 4 * h * w);
    buf.extend_from_slice(&SLICE_MAGIC);
    for v in [SLICE_VERSION, h as u32, w as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in img.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

pub fn read_slice(path: &Path) -> Result<Array2<f32>, DataError> {
    let bad = |reason: &str| DataError::SliceFile { path: path.to_path_buf(), reason: reason.to_string() };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    if bytes.len() < 16 || bytes[..4] != SLICE_MAGIC {
        return Err(bad("missing slice header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != SLICE_VERSION as usize {
        return Err(bad("unsupported slice version"));
    }
    let (h, w) = (word(1), word(2));
    if bytes.len() != 16 + 4 * h * w {
        return Err(bad("payload length does not match header"));
    }
    let data = bytes[16..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Array2::from_shape_vec((h, w), data).expect("length checked"))
}

/// One aligned HR/LR sample with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlicePair {
    pub volume_id: String,
    pub slice_index: usize,
    pub hr: Array2<f32>,
    pub lr: Array2<f32>,
}

impl SlicePair {
    pub fn slice_ref(&self) -> SliceRef {
        SliceRef { volume_id: self.volume_id.clone(), slice_index: self.slice_index }
    }

    /// Check the pairing contract: HR is 4x LR and all values are finite in `[0, 1]`.
    pub fn validate(&self) -> Result<(), DataError> {
        let (hh, hw) = self.hr.dim();
        let (lh, lw) = self.lr.dim();
        let id = self.slice_ref().image_id();
        if hh != 4 * lh || hw != 4 * lw {
            return Err(DataError::PairContract { id, reason: format!("hr {hh}x{hw} is not 4x lr {lh}x{lw}") });
        }
        if !self.hr.iter().chain(self.lr.iter()).all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(DataError::PairContract { id, reason: "values outside [0, 1]".into() });
        }
        Ok(())
    }
}

/// A prepared dataset directory: `manifest.json` plus `slices/`.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, DataError> {
        let manifest = DatasetManifest::load(root)?;
        Ok(Dataset { root: root.to_path_buf(), manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn slice_path(&self, slice: &SliceRef, kind: SliceKind) -> PathBuf {
        self.root.join(SLICES_DIR).join(slice_file_name(slice, kind))
    }

    pub fn refs(&self, split: Split) -> Vec<SliceRef> {
        self.manifest.slices(split).cloned().collect()
    }

    /// Look up an included slice by `<subject>_<slice:03>` id.
    pub fn find(&self, image_id: &str) -> Option<(SliceRef, Split)> {
        self.manifest
            .included_slices
            .iter()
            .find(|s| s.slice.image_id() == image_id)
            .map(|s| (s.slice.clone(), s.split))
    }

    pub fn load_pair(&self, slice: &SliceRef) -> Result<SlicePair, DataError> {
        let pair = SlicePair {
            volume_id: slice.volume_id.clone(),
            slice_index: slice.slice_index,
            hr: read_slice(&self.slice_path(slice, SliceKind::Hr))?,
            lr: read_slice(&self.slice_path(slice, SliceKind::Lr))?,
        };
        pair.validate()?;
        Ok(pair)
    }
}
