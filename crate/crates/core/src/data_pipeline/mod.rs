//! Volume ingestion, slice extraction and dataset preparation.

mod manifest;
mod slices;
mod storage;
mod volume;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ndarray::{s, Axis};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use manifest::{
    manifest_digest, BlankRule, Counts, DatasetManifest, ExcludedSlice, ExclusionReason, IncludedSlice, SliceRef,
    VolumeStatus, VolumeSummary, MANIFEST_FILE, MANIFEST_FORMAT,
};
pub use slices::{degrade, is_blank, normalize_volume, pad_slice, pad_to, PAD_TO, SCALE};
pub use storage::{read_slice, slice_file_name, write_slice, Dataset, SliceKind, SlicePair, SLICES_DIR};
pub use volume::{
    ingest_volume, is_t1_volume_file, subject_id_from_path, write_volume, Grade, Modality, Split, VolumeRecord,
    BRATS_SHAPE,
};

/// Reference slice counts for the full BraTS 2018 T1 set (285 volumes).
pub const BRATS2018_VOLUMES: usize = 285;
pub const BRATS2018_TRAIN_SLICES: usize = 31322;
pub const BRATS2018_TEST_SLICES: usize = 7823;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read volume {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: nifti::NiftiError,
    },
    #[error("volume {path} has shape {actual:?}, expected {}", expected.map_or("a 3D grid".to_string(), |e| format!("{e:?}")))]
    Shape { path: PathBuf, actual: Vec<usize>, expected: Option<[usize; 3]> },
    #[error("volume {path} has an unusable memory layout: {reason}")]
    Layout { path: PathBuf, reason: String },
    #[error("volume {volume} contains non-finite voxels")]
    NonFinite { volume: String },
    #[error("volume {volume} is constant ({value}); cannot normalise")]
    Degenerate { volume: String, value: f32 },
    #[error("slice of {height}x{width} does not fit in {target}x{target}")]
    PadTooLarge { height: usize, width: usize, target: usize },
    #[error("cannot degrade a {height}x{width} slice: need a square side divisible by 4")]
    DegradeShape { height: usize, width: usize },
    #[error("no volumes found")]
    EmptyInput,
    #[error("subject {subject} appears twice: {first} and {second}")]
    DuplicateSubject { subject: String, first: PathBuf, second: PathBuf },
    #[error("cannot infer HGG/LGG grade for {path}; pass a grade override")]
    UnknownGrade { path: PathBuf },
    #[error("split fraction {0} is outside [0, 1]")]
    SplitFraction(f64),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest {path} has format {found:?}, expected {MANIFEST_FORMAT:?}")]
    ManifestFormat { path: PathBuf, found: String },
    #[error("bad slice file {path}: {reason}")]
    SliceFile { path: PathBuf, reason: String },
    #[error("slice pair {id} violates the pairing contract: {reason}")]
    PairContract { id: String, reason: String },
}

/// Options for [`build_dataset`].
#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub seed: u64,
    pub split_fraction: f64,
    /// Applied to every volume instead of inferring from directory names.
    pub grade_override: Option<Grade>,
    /// `None` accepts any 3D grid whose slices fit in 256 x 256.
    pub expected_shape: Option<[usize; 3]>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { seed: 0, split_fraction: 0.8, grade_override: None, expected_shape: Some(BRATS_SHAPE) }
    }
}

/// Deterministic volume-level split. Subjects are ordered by
/// `sha256(seed_le || subject_id)` and the first `round(n * fraction)` go to
/// train. The outcome depends only on the subject set and the seed, never on
/// input order.
pub fn assign_splits<'a>(
    subjects: impl IntoIterator<Item = &'a str>,
    seed: u64,
    fraction: f64,
) -> Result<BTreeMap<String, Split>, DataError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DataError::SplitFraction(fraction));
    }
    let mut keyed: Vec<([u8; 32], &str)> = subjects
        .into_iter()
        .map(|id| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(id.as_bytes());
            (h.finalize().into(), id)
        })
        .collect();
    keyed.sort();
    let n_train = (keyed.len() as f64 * fraction).round() as usize;
    Ok(keyed
        .into_iter()
        .enumerate()
        .map(|(i, (_, id))| (id.to_string(), if i < n_train { Split::Train } else { Split::Test }))
        .collect())
}

/// Recursively collect T1 NIfTI files under `root`, sorted by path.
pub fn discover_volumes(root: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| DataError::Io {
            path: e.path().map_or_else(|| root.to_path_buf(), Path::to_path_buf),
            source: e.into(),
        })?;
        if entry.file_type().is_file() && is_t1_volume_file(entry.path()) {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

struct VolumeOutcome {
    summary: VolumeSummary,
    included: Vec<IncludedSlice>,
    excluded: Vec<ExcludedSlice>,
}

fn process_volume(
    path: &Path,
    grade: Grade,
    split: Split,
    opts: &BuildOptions,
    slice_dir: &Path,
) -> Result<VolumeOutcome, DataError> {
    let record = ingest_volume(path, grade, opts.expected_shape)?;
    let id = record.subject_id.clone();
    let (nx, ny, nz) = record.voxels.dim();
    let (lo, hi) = record.voxels.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let blank: Vec<bool> = record.voxels.axis_iter(Axis(2)).map(is_blank).collect();
    let slice_ref = |k| SliceRef { volume_id: id.clone(), slice_index: k };
    let mut summary = VolumeSummary {
        subject_id: id.clone(),
        grade,
        modality: record.modality,
        source_file: path.display().to_string(),
        shape: [nx, ny, nz],
        split,
        intensity_min: lo,
        intensity_max: hi,
        status: VolumeStatus::Ok,
    };

    let normalized = match normalize_volume(record) {
        Ok(v) => v,
        Err(DataError::Degenerate { volume, value }) => {
            log::warn!("excluding constant volume {volume} (value {value})");
            summary.status = VolumeStatus::Degenerate;
            let excluded = (0..nz)
                .map(|k| ExcludedSlice { slice: slice_ref(k), reason: ExclusionReason::DegenerateVolume })
                .collect();
            return Ok(VolumeOutcome { summary, included: Vec::new(), excluded });
        }
        Err(e) => return Err(e),
    };

    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for (k, &is_blank) in blank.iter().enumerate() {
        let r = slice_ref(k);
        if is_blank {
            excluded.push(ExcludedSlice { slice: r, reason: ExclusionReason::Blank });
            continue;
        }
        let hr = pad_slice(normalized.voxels.slice(s![.., .., k]))?;
        let lr = degrade(hr.view())?;
        write_slice(&slice_dir.join(slice_file_name(&r, SliceKind::Hr)), &hr)?;
        write_slice(&slice_dir.join(slice_file_name(&r, SliceKind::Lr)), &lr)?;
        included.push(IncludedSlice { slice: r, split });
    }
    log::debug!("{id}: {} slices kept, {} blank", included.len(), excluded.len());
    Ok(VolumeOutcome { summary, included, excluded })
}

/// Ingest, split and slice `volume_paths`, writing slice pairs and
/// `manifest.json` under `out_dir`. Volumes are processed in parallel and
/// merged in subject order, so the manifest is byte-identical across runs.
pub fn build_dataset(
    volume_paths: &[PathBuf],
    opts: &BuildOptions,
    out_dir: &Path,
) -> Result<DatasetManifest, DataError> {
    if volume_paths.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let mut by_subject: BTreeMap<String, (PathBuf, Grade)> = BTreeMap::new();
    for path in volume_paths {
        let id = subject_id_from_path(path);
        let grade = opts
            .grade_override
            .or_else(|| Grade::from_path(path))
            .ok_or_else(|| DataError::UnknownGrade { path: path.clone() })?;
        if let Some((first, _)) = by_subject.get(&id) {
            return Err(DataError::DuplicateSubject { subject: id, first: first.clone(), second: path.clone() });
        }
        by_subject.insert(id, (path.clone(), grade));
    }
    let splits = assign_splits(by_subject.keys().map(String::as_str), opts.seed, opts.split_fraction)?;

    let slice_dir = out_dir.join(SLICES_DIR);
    std::fs::create_dir_all(&slice_dir).map_err(|source| DataError::Io { path: slice_dir.clone(), source })?;

    let outcomes: Vec<VolumeOutcome> = by_subject
        .par_iter()
        .map(|(id, (path, grade))| process_volume(path, *grade, splits[id], opts, &slice_dir))
        .collect::<Result<_, _>>()?;

    let mut manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        seed: opts.seed,
        split_fraction: opts.split_fraction,
        scale: SCALE,
        pad_to: PAD_TO,
        blank_rule: BlankRule::AllZero,
        volumes: Vec::new(),
        included_slices: Vec::new(),
        excluded_slices: Vec::new(),
        counts: Counts::default(),
    };
    for o in outcomes {
        manifest.volumes.push(o.summary);
        manifest.included_slices.extend(o.included);
        manifest.excluded_slices.extend(o.excluded);
    }
    manifest.counts = manifest.tally();
    manifest.save(out_dir)?;

    let c = manifest.counts;
    log::info!(
        "{} volumes ({} train / {} test): {} train slices, {} test slices, {} excluded",
        c.volumes,
        c.train_volumes,
        c.test_volumes,
        c.train_slices,
        c.test_slices,
        c.excluded_slices
    );
    if c.volumes == BRATS2018_VOLUMES
        && (c.train_slices, c.test_slices) != (BRATS2018_TRAIN_SLICES, BRATS2018_TEST_SLICES)
    {
        log::warn!(
            "slice counts {}/{} differ from the BraTS 2018 reference {}/{}",
            c.train_slices,
            c.test_slices,
            BRATS2018_TRAIN_SLICES,
            BRATS2018_TEST_SLICES
        );
    }
    Ok(manifest)
}

/// Check the manifest's structural invariants: every slice of every volume is
/// either included or excluded exactly once, and no volume straddles splits.
pub fn check_manifest(m: &DatasetManifest) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    let all = m.included_slices.iter().map(|s| &s.slice).chain(m.excluded_slices.iter().map(|s| &s.slice));
    for s in all {
        if !seen.insert(s.clone()) {
            return Err(format!("slice {} listed twice", s.image_id()));
        }
    }
    for v in &m.volumes {
        for k in 0..v.shape[2] {
            if !seen.remove(&SliceRef { volume_id: v.subject_id.clone(), slice_index: k }) {
                return Err(format!("slice {}_{k:03} missing", v.subject_id));
            }
        }
    }
    if let Some(s) = seen.into_iter().next() {
        return Err(format!("slice {} belongs to no volume", s.image_id()));
    }
    for s in &m.included_slices {
        match m.volume(&s.slice.volume_id) {
            Some(v) if v.split == s.split => {}
            _ => return Err(format!("slice {} split disagrees with its volume", s.slice.image_id())),
        }
    }
    if m.tally() != m.counts {
        return Err("counts do not match slice lists".into());
    }
    Ok(())
}
