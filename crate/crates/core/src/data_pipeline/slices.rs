use ndarray::{s, Array2, ArrayView2};

use super::{DataError, VolumeRecord};
use crate::resample;

/// In-plane size every slice is padded to.
pub const PAD_TO: usize = 256;
/// Super-resolution factor between HR and LR slices.
pub const SCALE: usize = 4;

/// A slice is blank when every raw voxel is exactly zero.
pub fn is_blank(slice: ArrayView2<f32>) -> bool {
    slice.iter().all(|&v| v == 0.0)
}

/// Per-volume min-max rescale to `[0, 1]`. Constant volumes are rejected.
pub fn normalize_volume(mut v: VolumeRecord) -> Result<VolumeRecord, DataError> {
    let (min, max) = v.voxels.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !(min.is_finite() && max.is_finite()) {
        return Err(DataError::NonFinite { volume: v.subject_id });
    }
    if max <= min {
        return Err(DataError::Degenerate { volume: v.subject_id, value: min });
    }
    let (lo, range) = (min as f64, max as f64 - min as f64);
    v.voxels.mapv_inplace(|x| (((x as f64 - lo) / range) as f32).clamp(0.0, 1.0));
    Ok(v)
}

/// Centre `slice` on a zero `size x size` canvas.
pub fn pad_to(slice: ArrayView2<f32>, size: usize) -> Result<Array2<f32>, DataError> {
    let (h, w) = slice.dim();
    if h > size || w > size {
        return Err(DataError::PadTooLarge { height: h, width: w, target: size });
    }
    if (h, w) == (size, size) {
        return Ok(slice.to_owned());
    }
    let (top, left) = ((size - h) / 2, (size - w) / 2);
    let mut out = Array2::zeros((size, size));
    out.slice_mut(s![top..top + h, left..left + w]).assign(&slice);
    Ok(out)
}

/// Zero-pad a slice to 256 x 256 (an 8-pixel border for 240 x 240 input).
pub fn pad_slice(slice: ArrayView2<f32>) -> Result<Array2<f32>, DataError> {
    pad_to(slice, PAD_TO)
}

/// x4 antialiased bilinear downsampling of a square HR slice.
pub fn degrade(hr: ArrayView2<f32>) -> Result<Array2<f32>, DataError> {
    let (h, w) = hr.dim();
    if h != w || h % SCALE != 0 || h == 0 {
        return Err(DataError::DegradeShape { height: h, width: w });
    }
    Ok(resample::downsample_antialiased(hr, SCALE).mapv(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_pipeline::{Grade, Modality};
    use ndarray::Array3;

    fn record(voxels: Array3<f32>) -> VolumeRecord {
        VolumeRecord {
            subject_id: "v".into(),
            grade: Grade::Hgg,
            modality: Modality::T1,
            voxels,
            split: None,
            source: "v.nii".into(),
        }
    }

    #[test]
    fn blank_means_exactly_zero() {
        let mut s = Array2::<f32>::zeros((240, 240));
        assert!(is_blank(s.view()));
        s[[17, 200]] = 1e-3;
        assert!(!is_blank(s.view()));
    }

    #[test]
    fn min_max_normalisation() {
        let v = record(Array3::from_shape_vec((3, 1, 1), vec![0.0, 50.0, 100.0]).unwrap());
        let n = normalize_volume(v).unwrap();
        assert_eq!(n.voxels.iter().copied().collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        let unit = record(Array3::from_shape_vec((3, 1, 1), vec![0.0, 0.25, 1.0]).unwrap());
        let again = normalize_volume(unit.clone()).unwrap();
        assert_eq!(again.voxels, unit.voxels);
    }

    #[test]
    fn constant_volume_is_degenerate() {
        let v = record(Array3::from_elem((2, 2, 2), 7.0));
        assert!(matches!(normalize_volume(v), Err(DataError::Degenerate { .. })));
    }

    #[test]
    fn padding_centres_with_eight_pixel_border() {
        let ones = Array2::<f32>::ones((240, 240));
        let p = pad_slice(ones.view()).unwrap();
        assert_eq!(p.dim(), (256, 256));
        assert_eq!(p.sum(), 240.0 * 240.0);
        assert_eq!(p.slice(s![8..248, 8..248]).sum(), 240.0 * 240.0);
        assert!(p.row(7).iter().all(|&v| v == 0.0) && p.column(248).iter().all(|&v| v == 0.0));

        let mut impulse = Array2::<f32>::zeros((240, 240));
        impulse[[0, 0]] = 1.0;
        let p = pad_slice(impulse.view()).unwrap();
        assert_eq!(p[[8, 8]], 1.0);
        assert_eq!(p.sum(), 1.0);

        let full = Array2::from_shape_fn((256, 256), |(y, x)| (y * 256 + x) as f32);
        assert_eq!(pad_slice(full.view()).unwrap(), full);
        assert!(pad_slice(Array2::<f32>::zeros((257, 10)).view()).is_err());
    }

    #[test]
    fn degrade_shapes_and_constants() {
        let c = Array2::<f32>::from_elem((256, 256), 0.37);
        let lr = degrade(c.view()).unwrap();
        assert_eq!(lr.dim(), (64, 64));
        assert!(lr.iter().all(|&v| (v - 0.37).abs() < 1e-6));
        assert!(degrade(Array2::<f32>::zeros((256, 128)).view()).is_err());
        assert!(degrade(Array2::<f32>::zeros((254, 254)).view()).is_err());
    }
}
