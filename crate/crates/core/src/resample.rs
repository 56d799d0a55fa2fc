//! Separable resampling on 2D grayscale planes.
//!
//! All routines use half-pixel-centred coordinates: output sample `i` of an
//! `n`-sample axis scaled by `f` sits at source position `(i + 0.5) / f - 0.5`
//! (upscaling) or covers source footprint `[i * f, (i + 1) * f)` (downscaling).
//!
//! ## Antialiased bilinear downsampling
//!
//! Downscaling by an integer factor `f` uses the triangle (bilinear) filter
//! stretched to the output pixel size, i.e. source pixel `j` contributes to
//! output pixel `i` with weight `max(0, 1 - |j + 0.5 - (i + 0.5) f| / f)`,
//! renormalised so each output's weights sum to 1. For `f = 4` the interior
//! weight table along each axis is
//!
//! ```text
//! offset from i*4 : -2  -1   0   1   2   3   4   5
//! weight (x 1/32) :  1   3   5   7   7   5   3   1
//! ```
//!
//! and at the borders the taps falling outside the image are dropped and the
//! rest rescaled (e.g. the first output uses `5, 7, 7, 5, 3, 1` over 28).
//! The 2D filter is the outer product of the two axis filters.
//!
//! ## Upscaling
//!
//! Bilinear uses the two-tap tent; bicubic uses the Keys cubic convolution
//! kernel with `a = -0.75`. Out-of-range taps are clamped to the nearest
//! edge sample (replicate border).

use ndarray::{Array2, ArrayView2};

/// One output sample: first source index and its contiguous weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps {
    pub start: usize,
    pub weights: Vec<f64>,
}

/// Axis weights for antialiased bilinear downsampling by `factor`.
pub fn antialias_taps(in_len: usize, factor: usize) -> Vec<Taps> {
    assert!(factor >= 1 && in_len.is_multiple_of(factor), "length {in_len} not divisible by {factor}");
    let f = factor as f64;
    (0..in_len / factor)
        .map(|i| {
            let centre = (i as f64 + 0.5) * f;
            let lo = (centre - f).floor().max(0.0) as usize;
            let hi = ((centre + f).ceil() as usize).min(in_len);
            let raw: Vec<f64> = (lo..hi).map(|j| (1.0 - ((j as f64 + 0.5) - centre).abs() / f).max(0.0)).collect();
            let total: f64 = raw.iter().sum();
            // Trim zero-weight edges so `start` points at the first real tap.
            let first = raw.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = raw.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            Taps { start: lo + first, weights: raw[first..=last].iter().map(|w| w / total).collect() }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpscaleKernel {
    Bilinear,
    Bicubic,
}

impl UpscaleKernel {
    pub const BICUBIC_A: f64 = -0.75;

    /// Continuous kernel value at distance `x`.
    pub fn eval(self, x: f64) -> f64 {
        let x = x.abs();
        match self {
            UpscaleKernel::Bilinear => (1.0 - x).max(0.0),
            UpscaleKernel::Bicubic => {
                let a = Self::BICUBIC_A;
                if x <= 1.0 {
                    ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
                } else if x < 2.0 {
                    ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
                } else {
                    0.0
                }
            }
        }
    }

    fn radius(self) -> isize {
        match self {
            UpscaleKernel::Bilinear => 1,
            UpscaleKernel::Bicubic => 2,
        }
    }
}

/// Per-output (source index, weight) pairs for upscaling with edge replication.
pub fn upscale_taps(in_len: usize, factor: usize, kernel: UpscaleKernel) -> Vec<Vec<(usize, f64)>> {
    let f = factor as f64;
    let r = kernel.radius();
    (0..in_len * factor)
        .map(|o| {
            let src = (o as f64 + 0.5) / f - 0.5;
            let base = src.floor() as isize;
            (base - r + 1..=base + r)
                .map(|j| {
                    let w = kernel.eval(src - j as f64);
                    (j.clamp(0, in_len as isize - 1) as usize, w)
                })
                .filter(|&(_, w)| w != 0.0)
                .collect()
        })
        .collect()
}

fn separable<T>(
    img: ArrayView2<f32>,
    rows: &[T],
    cols: &[T],
    apply: impl Fn(&T, &dyn Fn(usize) -> f64) -> f64,
) -> Array2<f64> {
    let (h, _) = img.dim();
    let mut tmp = Array2::<f64>::zeros((h, cols.len()));
    for y in 0..h {
        let row = img.row(y);
        for (x, t) in cols.iter().enumerate() {
            tmp[[y, x]] = apply(t, &|j| row[j] as f64);
        }
    }
    let mut out = Array2::<f64>::zeros((rows.len(), cols.len()));
    for x in 0..cols.len() {
        let col = tmp.column(x);
        for (y, t) in rows.iter().enumerate() {
            out[[y, x]] = apply(t, &|j| col[j]);
        }
    }
    out
}

/// Antialiased bilinear downsampling by an integer factor along both axes.
/// Panics if either dimension is not a multiple of `factor`.
pub fn downsample_antialiased(img: ArrayView2<f32>, factor: usize) -> Array2<f32> {
    let (h, w) = img.dim();
    let rows = antialias_taps(h, factor);
    let cols = antialias_taps(w, factor);
    separable(img, &rows, &cols, |t, get| t.weights.iter().enumerate().map(|(k, &wt)| wt * get(t.start + k)).sum())
        .mapv(|v| v as f32)
}

/// Upscale by an integer factor. Output is not clamped; see
/// [`crate::evaluator::baseline_upscale`] for the clamped baseline.
pub fn upscale(img: ArrayView2<f32>, factor: usize, kernel: UpscaleKernel) -> Array2<f32> {
    let (h, w) = img.dim();
    let rows = upscale_taps(h, factor, kernel);
    let cols = upscale_taps(w, factor, kernel);
    separable(img, &rows, &cols, |t, get| t.iter().map(|&(j, wt)| wt * get(j)).sum()).mapv(|v| v as f32)
}

/// Nearest-neighbour replication by an integer factor (display only).
pub fn upscale_nearest(img: ArrayView2<f32>, factor: usize) -> Array2<f32> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h * factor, w * factor), |(y, x)| img[[y / factor, x / factor]])
}
