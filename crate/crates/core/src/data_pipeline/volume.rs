use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis, Ix3};
use nifti::{IntoNdArray, NiftiObject, NiftiVolume, ReaderOptions};
use serde::{Deserialize, Serialize};

use super::DataError;

/// Voxel grid of a BraTS volume: 240 x 240 in-plane, 155 axial slices.
pub const BRATS_SHAPE: [usize; 3] = [240, 240, 155];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    #[serde(rename = "HGG")]
    Hgg,
    #[serde(rename = "LGG")]
    Lgg,
}

impl std::str::FromStr for Grade {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "HGG" => Ok(Grade::Hgg),
            "LGG" => Ok(Grade::Lgg),
            other => Err(format!("unknown grade {other:?}, expected HGG or LGG")),
        }
    }
}

impl Grade {
    /// Grade named by the nearest `HGG`/`LGG` path component, if any.
    pub fn from_path(path: &Path) -> Option<Grade> {
        path.ancestors().filter_map(|p| p.file_name()?.to_str()).find_map(|name| name.parse().ok())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    T1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One ingested 3D volume with raw scanner intensities, indexed
/// `[x, y, slice]`.
#[derive(Clone, Debug)]
pub struct VolumeRecord {
    pub subject_id: String,
    pub grade: Grade,
    pub modality: Modality,
    pub voxels: Array3<f32>,
    /// Assigned when the volume enters a dataset.
    pub split: Option<Split>,
    pub source: PathBuf,
}

impl VolumeRecord {
    pub fn num_slices(&self) -> usize {
        self.voxels.dim().2
    }
}

/// Derive the subject id from a BraTS-style file name:
/// `Brats18_2013_2_1_t1.nii.gz` becomes `Brats18_2013_2_1`.
pub fn subject_id_from_path(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let stem = name.strip_suffix(".gz").unwrap_or(name);
    let stem = stem.strip_suffix(".nii").unwrap_or(stem);
    stem.strip_suffix("_t1").unwrap_or(stem).to_string()
}

/// Whether a path names a NIfTI file that should be ingested as a T1
/// volume. Other BraTS modalities and segmentation masks are skipped.
pub fn is_t1_volume_file(path: &Path) -> bool {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else { return false };
    let stem = match name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii")) {
        Some(s) => s,
        None => return false,
    };
    !["_t1ce", "_t2", "_flair", "_seg"].iter().any(|suffix| stem.ends_with(suffix))
}

/// Read a NIfTI volume. `expected_shape` rejects other grids; pass `None`
/// to accept any 3D volume.
pub fn ingest_volume(path: &Path, grade: Grade, expected_shape: Option<[usize; 3]>) -> Result<VolumeRecord, DataError> {
    let read_err = |source| DataError::Read { path: path.to_path_buf(), source };
    let obj = ReaderOptions::new().read_file(path).map_err(read_err)?;
    let mut dims: Vec<usize> = obj.volume().dim().iter().map(|&d| d as usize).collect();
    // Trailing singleton axes (time, components) carry no data.
    while dims.len() > 3 && dims.last() == Some(&1) {
        dims.pop();
    }
    if dims.len() != 3 {
        return Err(DataError::Shape { path: path.to_path_buf(), actual: dims, expected: expected_shape });
    }
    if let Some(expected) = expected_shape {
        if dims != expected {
            return Err(DataError::Shape { path: path.to_path_buf(), actual: dims, expected: Some(expected) });
        }
    }
    let mut data = obj.into_volume().into_ndarray::<f32>().map_err(read_err)?;
    while data.ndim() > 3 {
        let last = Axis(data.ndim() - 1);
        data = data.index_axis_move(last, 0);
    }
    let voxels = data
        .into_dimensionality::<Ix3>()
        .map_err(|e| DataError::Layout { path: path.to_path_buf(), reason: e.to_string() })?
        .as_standard_layout()
        .into_owned();
    Ok(VolumeRecord {
        subject_id: subject_id_from_path(path),
        grade,
        modality: Modality::T1,
        voxels,
        split: None,
        source: path.to_path_buf(),
    })
}

/// Write a float32 volume as NIfTI-1 (gzip-compressed when the path ends
/// in `.gz`).
pub fn write_volume(path: &Path, voxels: &Array3<f32>) -> Result<(), DataError> {
    nifti::writer::WriterOptions::new(path)
        .write_nifti(voxels)
        .map_err(|source| DataError::Read { path: path.to_path_buf(), source })
}
