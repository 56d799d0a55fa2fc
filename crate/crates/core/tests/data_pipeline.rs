//! Volume ingestion, slice preprocessing and dataset assembly.

mod common;

use std::collections::BTreeSet;

use mrsr::data_pipeline::{
    build_dataset, check_manifest, degrade, ingest_volume, is_blank, manifest_digest, normalize_volume, pad_slice,
    write_volume, BuildOptions, DataError, Dataset, DatasetManifest, ExclusionReason, Grade, Split, VolumeRecord,
};
use mrsr::phantom::phantom_volume;
use ndarray::{s, Array2, Array3, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opts(seed: u64) -> BuildOptions {
    BuildOptions { seed, split_fraction: 0.8, grade_override: Some(Grade::Hgg), expected_shape: None }
}

fn record(voxels: Array3<f32>) -> VolumeRecord {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("Brats18_X_1_t1.nii");
    write_volume(&path, &voxels).unwrap();
    ingest_volume(&path, Grade::Hgg, None).unwrap()
}

#[test]
fn ingest_round_trips_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = Array3::from_shape_fn((12, 9, 5), |_| rng.random_range(-50.0f32..900.0));
    let r = record(v.clone());
    assert_eq!(r.voxels.dim(), (12, 9, 5));
    assert!(r.voxels.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(r.subject_id, "Brats18_X_1");
}

#[test]
fn ingest_rejects_wrong_dimensionality_and_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let flat = tmp.path().join("flat_t1.nii");
    nifti::writer::WriterOptions::new(&flat).write_nifti(&Array2::<f32>::ones((16, 16))).unwrap();
    match ingest_volume(&flat, Grade::Hgg, None) {
        Err(DataError::Shape { actual, .. }) => assert_eq!(actual, vec![16, 16]),
        other => panic!("expected a shape error, got {other:?}"),
    }
    let cube = tmp.path().join("cube_t1.nii");
    write_volume(&cube, &Array3::ones((4, 4, 4))).unwrap();
    let err = ingest_volume(&cube, Grade::Hgg, Some([240, 240, 155])).unwrap_err();
    assert!(err.to_string().contains("[4, 4, 4]"), "{err}");
    let missing = tmp.path().join("missing_t1.nii");
    let err = ingest_volume(&missing, Grade::Hgg, None).unwrap_err();
    assert!(err.to_string().contains("missing_t1.nii"), "{err}");
}

#[test]
fn blank_detection_matches_exhaustive_scan() {
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blanks: Vec<usize> = (0..10).filter(|_| rng.random_bool(0.3)).collect();
        let mut v = phantom_volume(32, 32, 10, seed, &blanks);
        // A single faint voxel keeps a plane from being blank.
        if let Some(&k) = blanks.first() {
            v[[3, 4, k]] = 1e-3;
        }
        let mut scan = 0;
        for k in 0..10 {
            let mut all_zero = true;
            for i in 0..32 {
                for j in 0..32 {
                    all_zero &= v[[i, j, k]] == 0.0;
                }
            }
            scan += all_zero as usize;
        }
        let flagged = v.axis_iter(Axis(2)).filter(|p| is_blank(p.view())).count();
        assert_eq!(flagged, scan, "seed {seed}");
    }
    assert!(is_blank(Array2::zeros((240, 240)).view()));
}

#[test]
fn normalisation_examples() {
    let v = Array3::from_shape_vec((3, 1, 1), vec![0.0, 50.0, 100.0]).unwrap();
    let n = normalize_volume(record(v)).unwrap();
    assert_eq!(n.voxels.iter().copied().collect::<Vec<_>>(), [0.0, 0.5, 1.0]);
    let unit = Array3::from_shape_fn((4, 4, 2), |(i, j, k)| ((i + 4 * j + 16 * k) as f32) / 31.0);
    assert_eq!(normalize_volume(record(unit.clone())).unwrap().voxels, unit);
    let err = normalize_volume(record(Array3::from_elem((2, 2, 2), 7.0))).unwrap_err();
    assert!(matches!(err, DataError::Degenerate { .. }));
}

#[test]
fn normalisation_preserves_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = Array3::from_shape_fn((20, 20, 5), |_| rng.random_range(-300.0f32..3000.0));
    let n = normalize_volume(record(v.clone())).unwrap().voxels;
    let (raw, norm) = (v.as_slice().unwrap(), n.as_slice().unwrap());
    for _ in 0..1000 {
        let (a, b) = (rng.random_range(0..raw.len()), rng.random_range(0..raw.len()));
        // Scaling is monotone; distinct raw values may round to the same f32.
        let (r, m) = (raw[a].partial_cmp(&raw[b]).unwrap(), norm[a].partial_cmp(&norm[b]).unwrap());
        assert!(m == r || m == std::cmp::Ordering::Equal, "order flipped for {} vs {}", raw[a], raw[b]);
    }
}

#[test]
fn padding_examples() {
    let ones = Array2::<f32>::ones((240, 240));
    let p = pad_slice(ones.view()).unwrap();
    assert_eq!(p.dim(), (256, 256));
    assert_eq!(p.sum(), 240.0 * 240.0);
    assert_eq!(p.slice(s![8..248, 8..248]).sum(), 240.0 * 240.0);
    let mut impulse = Array2::<f32>::zeros((240, 240));
    impulse[[0, 0]] = 1.0;
    let q = pad_slice(impulse.view()).unwrap();
    assert_eq!(q[[8, 8]], 1.0);
    assert_eq!(q.sum(), 1.0);
    let full = Array2::from_shape_fn((256, 256), |(i, j)| (i * j) as f32);
    assert_eq!(pad_slice(full.view()).unwrap(), full);
    assert!(pad_slice(Array2::zeros((257, 200)).view()).is_err());
}

/// Direct 2D weighted average: each output pixel averages its 8x8-tap
/// footprint with triangle weights, renormalised over in-bounds pixels.
fn degrade_oracle(hr: &Array2<f32>) -> Array2<f64> {
    let tent = |d: f64| (1.0 - d.abs() / 4.0).max(0.0);
    let (h, w) = hr.dim();
    Array2::from_shape_fn((h / 4, w / 4), |(i, j)| {
        let (cy, cx) = ((i as f64 + 0.5) * 4.0, (j as f64 + 0.5) * 4.0);
        let (mut num, mut den) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let k = tent(y as f64 + 0.5 - cy) * tent(x as f64 + 0.5 - cx);
                num += k * hr[[y, x]] as f64;
                den += k;
            }
        }
        num / den
    })
}

#[test]
fn degrade_matches_direct_oracle_on_ramp() {
    let ramp = Array2::from_shape_fn((256, 256), |(y, x)| (0.1 + 0.002 * x as f64 + 0.001 * y as f64) as f32);
    let lr = degrade(ramp.view()).unwrap();
    assert_eq!(lr.dim(), (64, 64));
    let oracle = degrade_oracle(&ramp);
    let worst = lr.iter().zip(&oracle).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-6, "max abs diff {worst}");
    let c = degrade(Array2::from_elem((256, 256), 0.37f32).view()).unwrap();
    assert!(c.iter().all(|&v| (v - 0.37).abs() < 1e-6));
    assert!(degrade(Array2::zeros((256, 128)).view()).is_err());
    assert!(degrade(Array2::zeros((250, 250)).view()).is_err());
}

#[test]
fn one_volume_three_slices_one_blank() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = Array3::<f32>::zeros((240, 240, 3));
    v.slice_mut(s![100..140, 90..150, 0]).fill(200.0);
    v.slice_mut(s![60..180, 60..180, 2]).fill(80.0);
    let path = tmp.path().join("HGG/Brats18_Y_1/Brats18_Y_1_t1.nii.gz");
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_volume(&path, &v).unwrap();
    let m = build_dataset(&[path], &opts(0), &tmp.path().join("out")).unwrap();
    assert_eq!(m.included_slices.len(), 2);
    assert_eq!(m.excluded_slices.len(), 1);
    assert_eq!(m.excluded_slices[0].slice.slice_index, 1);
    assert_eq!(m.excluded_slices[0].reason, ExclusionReason::Blank);
    check_manifest(&m).unwrap();
}

#[test]
fn dataset_is_deterministic_partitioned_and_leak_free() {
    let tmp = tempfile::tempdir().unwrap();
    let paths = common::write_fixture_volumes(&tmp.path().join("raw"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = BuildOptions { grade_override: None, ..opts(5) };
    let m = build_dataset(&paths, &o, &a).unwrap();
    let mut reversed = paths.clone();
    reversed.reverse();
    build_dataset(&reversed, &o, &b).unwrap();
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(manifest_digest(&a).unwrap(), manifest_digest(&b).unwrap());

    let total: usize = m.volumes.iter().map(|v| v.shape[2]).sum();
    assert_eq!(m.included_slices.len() + m.excluded_slices.len(), total);
    let vols = |split| {
        m.included_slices
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.slice.volume_id.clone())
            .collect::<BTreeSet<_>>()
    };
    assert!(vols(Split::Train).is_disjoint(&vols(Split::Test)));

    let ds = Dataset::open(&a).unwrap();
    for split in [Split::Train, Split::Test] {
        for r in ds.refs(split) {
            let p = ds.load_pair(&r).unwrap();
            p.validate().unwrap();
            assert!(p.hr.iter().chain(&p.lr).all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }
    assert_eq!(DatasetManifest::load(&a).unwrap(), m);
}

#[test]
fn dataset_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(build_dataset(&[], &opts(0), tmp.path()), Err(DataError::EmptyInput)));
    let v = phantom_volume(16, 16, 2, 0, &[]);
    let (p1, p2) = (tmp.path().join("x/S_1_t1.nii"), tmp.path().join("y/S_1_t1.nii"));
    for p in [&p1, &p2] {
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        write_volume(p, &v).unwrap();
    }
    let err = build_dataset(&[p1.clone(), p2], &opts(0), &tmp.path().join("o")).unwrap_err();
    assert!(matches!(err, DataError::DuplicateSubject { .. }), "{err}");
    let no_grade = BuildOptions { grade_override: None, ..opts(0) };
    assert!(matches!(build_dataset(&[p1], &no_grade, &tmp.path().join("o")), Err(DataError::UnknownGrade { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn degrade_contracts_the_range(seed in any::<u64>(), side in 1usize..12, lo in 0.0f32..0.5, span in 0.0f32..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4 * side;
        let hr = Array2::from_shape_fn((n, n), |_| lo + span * rng.random::<f32>());
        let lr = degrade(hr.view()).unwrap();
        let (mn, mx) = hr.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert_eq!(lr.dim(), (side, side));
        for &v in &lr {
            prop_assert!(v as f64 >= mn as f64 - 1e-9 && v as f64 <= mx as f64 + 1e-9);
        }
    }

    #[test]
    fn padding_preserves_mass(seed in any::<u64>(), h in 1usize..=256, w in 1usize..=256) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Array2::from_shape_fn((h, w), |_| rng.random_range(0u8..4) as f32);
        let p = pad_slice(img.view()).unwrap();
        prop_assert_eq!(p.sum(), img.sum());
    }
}
