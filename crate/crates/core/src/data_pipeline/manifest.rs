use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, Grade, Modality, Split};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "mrsr-manifest/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlankRule {
    /// Every raw voxel of the slice is exactly zero.
    #[default]
    AllZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeStatus {
    Ok,
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSummary {
    pub subject_id: String,
    pub grade: Grade,
    pub modality: Modality,
    pub source_file: String,
    pub shape: [usize; 3],
    pub split: Split,
    pub intensity_min: f32,
    pub intensity_max: f32,
    pub status: VolumeStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceRef {
    pub volume_id: String,
    pub slice_index: usize,
}

impl SliceRef {
    /// `<subject>_<slice:03>`, the id used in reports and file names.
    pub fn image_id(&self) -> String {
        format!("{}_{:03}", self.volume_id, self.slice_index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncludedSlice {
    #[serde(flatten)]
    pub slice: SliceRef,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Blank,
    DegenerateVolume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSlice {
    #[serde(flatten)]
    pub slice: SliceRef,
    pub reason: ExclusionReason,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub volumes: usize,
    pub train_volumes: usize,
    pub test_volumes: usize,
    pub train_slices: usize,
    pub test_slices: usize,
    pub excluded_slices: usize,
}

/// Persisted record of a prepared dataset: split, slice provenance and
/// every exclusion decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub split_fraction: f64,
    pub scale: usize,
    pub pad_to: usize,
    pub blank_rule: BlankRule,
    pub volumes: Vec<VolumeSummary>,
    pub included_slices: Vec<IncludedSlice>,
    pub excluded_slices: Vec<ExcludedSlice>,
    pub counts: Counts,
}

impl DatasetManifest {
    pub fn slices(&self, split: Split) -> impl Iterator<Item = &SliceRef> {
        self.included_slices.iter().filter(move |s| s.split == split).map(|s| &s.slice)
    }

    pub fn volume(&self, id: &str) -> Option<&VolumeSummary> {
        self.volumes.iter().find(|v| v.subject_id == id)
    }

    /// Recompute [`Counts`] from the slice and volume lists.
    pub fn tally(&self) -> Counts {
        let vols = |s| self.volumes.iter().filter(|v| v.split == s).count();
        Counts {
            volumes: self.volumes.len(),
            train_volumes: vols(Split::Train),
            test_volumes: vols(Split::Test),
            train_slices: self.slices(Split::Train).count(),
            test_slices: self.slices(Split::Test).count(),
            excluded_slices: self.excluded_slices.len(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let io = |source| DataError::Io { path: path.clone(), source };
        std::fs::write(&tmp, self.to_json()).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| DataError::Io { path: path.clone(), source })?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|source| DataError::Manifest { path: path.clone(), source })?;
        if m.format != MANIFEST_FORMAT {
            return Err(DataError::ManifestFormat { path, found: m.format });
        }
        Ok(m)
    }
}

/// Hex SHA-256 of a manifest file.
pub fn manifest_digest(dir: &Path) -> Result<String, DataError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(|source| DataError::Io { path, source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
