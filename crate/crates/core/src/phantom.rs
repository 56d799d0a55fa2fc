//! Synthetic head-like phantoms for tests, demos and smoke runs.
//!
//! A phantom slice is a skull ring around a textured brain ellipse with
//! dark ventricles and a few bright lesions, on a zero background. All
//! geometry is drawn from a seeded generator.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_pipeline::{degrade, pad_slice, write_volume, DataError, SlicePair};

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    /// Squared normalised radius of `(y, x)`; below 1 is inside.
    fn rho(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2)
    }
}

/// A `(h, w)` phantom with values in `[0, 1]`, the `slice`-th of a
/// volume seeded by `seed`. Neighbouring slices share geometry and differ
/// by a smooth shrinkage towards the volume ends.
pub fn phantom_slice(h: usize, w: usize, seed: u64, slice: usize, depth: usize) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let t = if depth > 1 { slice as f64 / (depth - 1) as f64 } else { 0.5 };
    let shrink = (1.0 - (2.0 * t - 1.0).powi(2) * 0.5).max(0.3);
    let head = Ellipse {
        cy: hf * (0.5 + rng.random_range(-0.03..0.03)),
        cx: wf * (0.5 + rng.random_range(-0.03..0.03)),
        ry: hf * rng.random_range(0.38..0.45) * shrink,
        rx: wf * rng.random_range(0.30..0.38) * shrink,
        angle: rng.random_range(-0.2..0.2),
    };
    let brain = Ellipse { ry: head.ry * 0.88, rx: head.rx * 0.86, ..head };
    let ventricles: Vec<Ellipse> = (0..2)
        .map(|k| Ellipse {
            cy: head.cy + rng.random_range(-0.05..0.05) * hf,
            cx: head.cx + if k == 0 { -1.0 } else { 1.0 } * rng.random_range(0.03..0.07) * wf,
            ry: rng.random_range(0.08..0.14) * hf * shrink,
            rx: rng.random_range(0.02..0.04) * wf * shrink,
            angle: rng.random_range(-0.4..0.4),
        })
        .collect();
    let lesions: Vec<(Ellipse, f64)> = (0..rng.random_range(1..4))
        .map(|_| {
            let r = rng.random_range(0.02..0.06) * hf;
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let d = rng.random_range(0.0..0.6);
            (
                Ellipse {
                    cy: brain.cy + d * brain.ry * ang.sin(),
                    cx: brain.cx + d * brain.rx * ang.cos(),
                    ry: r,
                    rx: r * rng.random_range(0.6..1.4),
                    angle: rng.random_range(0.0..3.0),
                },
                rng.random_range(0.75..0.95),
            )
        })
        .collect();
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.15..0.6),
                rng.random_range(0.0..std::f64::consts::PI),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.03..0.08),
            )
        })
        .collect();
    let wm = rng.random_range(0.45..0.6);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let rh = head.rho(yf, xf);
        if rh >= 1.0 {
            return 0.0;
        }
        let rb = brain.rho(yf, xf);
        if rb >= 1.0 {
            return 0.85;
        }
        let mut v = wm + 0.12 * rb;
        for &(f, dir, phase, amp) in &waves {
            v += amp * (f * (xf * dir.cos() + yf * dir.sin()) + phase).sin();
        }
        if ventricles.iter().any(|e| e.rho(yf, xf) < 1.0) {
            v = 0.12;
        }
        for (e, level) in &lesions {
            if e.rho(yf, xf) < 1.0 {
                v = *level;
            }
        }
        v.clamp(0.02, 1.0) as f32
    })
}

/// A phantom volume of `(h, w, depth)` on an MR-like 0..1000 scale, with
/// the listed slice indices left entirely zero.
pub fn phantom_volume(h: usize, w: usize, depth: usize, seed: u64, blank: &[usize]) -> Array3<f32> {
    let mut vol = Array3::zeros((h, w, depth));
    for k in (0..depth).filter(|k| !blank.contains(k)) {
        let s = phantom_slice(h, w, seed, k, depth).mapv(|v| v * 1000.0);
        vol.index_axis_mut(ndarray::Axis(2), k).assign(&s);
    }
    vol
}

/// Write `<root>/<grade>/<subject>/<subject>_t1.nii.gz` phantom volumes.
/// Each entry is `(subject, grade dir, seed, blank slices)`.
pub fn write_phantom_dataset(
    root: &Path,
    (h, w, depth): (usize, usize, usize),
    subjects: &[(&str, &str, u64, Vec<usize>)],
) -> Result<Vec<PathBuf>, DataError> {
    subjects
        .iter()
        .map(|(id, grade, seed, blank)| {
            let dir = root.join(grade).join(id);
            std::fs::create_dir_all(&dir).map_err(|source| DataError::Io { path: dir.clone(), source })?;
            let path = dir.join(format!("{id}_t1.nii.gz"));
            write_volume(&path, &phantom_volume(h, w, depth, *seed, blank))?;
            Ok(path)
        })
        .collect()
}

/// A 240x240 phantom padded to 256x256 with its degraded 64x64 partner,
/// following the training-data contract.
pub fn phantom_pair(seed: u64, slice: usize) -> SlicePair {
    let hr = pad_slice(phantom_slice(240, 240, seed, slice, 155).view()).expect("240 fits in 256");
    let lr = degrade(hr.view()).expect("256 divides by 4");
    SlicePair { volume_id: format!("phantom{seed}"), slice_index: slice, hr, lr }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_are_deterministic_and_in_range() {
        let a = phantom_slice(64, 64, 5, 3, 10);
        assert_eq!(a, phantom_slice(64, 64, 5, 3, 10));
        assert_ne!(a, phantom_slice(64, 64, 6, 3, 10));
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a[[0, 0]], 0.0);
        assert!(a.iter().any(|&v| v > 0.5));
    }

    #[test]
    fn volumes_honour_blank_list() {
        let v = phantom_volume(32, 32, 5, 1, &[0, 4]);
        let nonzero = |k: usize| v.index_axis(ndarray::Axis(2), k).iter().any(|&x| x != 0.0);
        assert_eq!((0..5).map(nonzero).collect::<Vec<_>>(), [false, true, true, true, false]);
    }

    #[test]
    fn pair_matches_contract() {
        let p = phantom_pair(1, 70);
        p.validate().unwrap();
        assert_eq!((p.hr.dim(), p.lr.dim()), ((256, 256), (64, 64)));
    }
}
