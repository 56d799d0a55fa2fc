//! Full-reference image quality metrics on 2D planes.
//!
//! Every metric accepts `f32` or `f64` views and accumulates in `f64`.

use ndarray::{Array2, ArrayView2, Zip};

use super::EvalError;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Inputs are normalised to `[0, 1]`.
pub const DATA_RANGE: f64 = 1.0;

/// Gaussian-domain noise variance of the VIF channel model, on the
/// 0..255 intensity scale.
pub const VIF_SIGMA_N_SQ: f64 = 2.0;
/// Smallest side for which all four VIF scales have a full window.
pub const VIF_MIN_SIDE: usize = 41;
const VIF_EPS: f64 = 1e-10;

fn same_shape<A, B>(x: &ArrayView2<A>, y: &ArrayView2<B>) -> Result<(), EvalError> {
    if x.dim() != y.dim() {
        return Err(EvalError::Shape(format!("{:?} vs {:?}", x.dim(), y.dim())));
    }
    if x.is_empty() {
        return Err(EvalError::Shape("empty image".into()));
    }
    Ok(())
}

fn to_f64<A: Copy + Into<f64>>(x: ArrayView2<A>) -> Array2<f64> {
    x.mapv(Into::into)
}

/// Normalised 1D Gaussian of `n` taps. The 2D window is its outer product.
pub fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum::<f64>();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable correlation keeping only positions where the window fits.
fn filter_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let n = taps.len();
    let (h, w) = img.dim();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            rows[[y, x]] = (0..n).map(|k| taps[k] * img[[y, x + k]]).sum::<f64>();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = (0..n).map(|k| taps[k] * rows[[y + k, x]]).sum::<f64>();
        }
    }
    out
}

/// Mean SSIM over the window positions that lie fully inside the image.
pub fn ssim<A: Copy + Into<f64>>(x: ArrayView2<A>, y: ArrayView2<A>) -> Result<f64, EvalError> {
    same_shape(&x, &y)?;
    let (h, w) = x.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(EvalError::TooSmall { metric: "ssim", min: SSIM_WINDOW, h, w });
    }
    let (x, y) = (to_f64(x), to_f64(y));
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mx = filter_valid(&x, &taps);
    let my = filter_valid(&y, &taps);
    let mxx = filter_valid(&(&x * &x), &taps);
    let myy = filter_valid(&(&y * &y), &taps);
    let mxy = filter_valid(&(&x * &y), &taps);
    let c1 = (SSIM_K1 * DATA_RANGE).powi(2);
    let c2 = (SSIM_K2 * DATA_RANGE).powi(2);
    let mut total = 0.0;
    Zip::from(&mx).and(&my).and(&mxx).and(&myy).and(&mxy).for_each(|&a, &b, &aa, &bb, &ab| {
        let (vx, vy, cov) = (aa - a * a, bb - b * b, ab - a * b);
        total += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
    });
    Ok(total / mx.len() as f64)
}

/// Root-mean-square error divided by the mean of the reference `gt`.
pub fn nrmse<A: Copy + Into<f64>>(gt: ArrayView2<A>, pred: ArrayView2<A>) -> Result<f64, EvalError> {
    same_shape(&gt, &pred)?;
    let n = gt.len() as f64;
    let mean = gt.iter().map(|&v| v.into()).sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(EvalError::DegenerateReference(format!("reference mean is {mean}")));
    }
    let mse = Zip::from(&gt).and(&pred).fold(0.0, |acc, &a, &b| acc + (a.into() - b.into()).powi(2)) / n;
    Ok(mse.sqrt() / mean)
}

/// Mean absolute difference.
pub fn mae<A: Copy + Into<f64>>(x: ArrayView2<A>, y: ArrayView2<A>) -> Result<f64, EvalError> {
    same_shape(&x, &y)?;
    let s = Zip::from(&x).and(&y).fold(0.0, |acc, &a, &b| acc + (a.into() - b.into()).abs());
    Ok(s / x.len() as f64)
}

/// Pixel-domain visual information fidelity over four scales.
///
/// Both images are rescaled to 0..255. Scale `s = 1..=4` uses a Gaussian
/// window of `N = 2^(5-s) + 1` taps with `sigma = N / 5`; before scales 2..4
/// the images are low-passed with that scale's window and decimated by two.
/// Local statistics use valid-mode filtering, so the image must be at least
/// [`VIF_MIN_SIDE`] pixels on each side.
pub fn vif<A: Copy + Into<f64>>(gt: ArrayView2<A>, pred: ArrayView2<A>) -> Result<f64, EvalError> {
    same_shape(&gt, &pred)?;
    let (h, w) = gt.dim();
    if h < VIF_MIN_SIDE || w < VIF_MIN_SIDE {
        return Err(EvalError::TooSmall { metric: "vif", min: VIF_MIN_SIDE, h, w });
    }
    let mut r = gt.mapv(|v| v.into() * 255.0);
    let mut d = pred.mapv(|v| v.into() * 255.0);
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=4u32 {
        let n = (1usize << (5 - scale)) + 1;
        let taps = gaussian_taps(n, n as f64 / 5.0);
        if scale > 1 {
            r = decimate(&filter_valid(&r, &taps));
            d = decimate(&filter_valid(&d, &taps));
        }
        let mu1 = filter_valid(&r, &taps);
        let mu2 = filter_valid(&d, &taps);
        let s11 = filter_valid(&(&r * &r), &taps);
        let s22 = filter_valid(&(&d * &d), &taps);
        let s12 = filter_valid(&(&r * &d), &taps);
        Zip::from(&mu1).and(&mu2).and(&s11).and(&s22).and(&s12).for_each(|&m1, &m2, &a, &b, &c| {
            let (n_, dn) = vif_terms(a - m1 * m1, b - m2 * m2, c - m1 * m2);
            num += n_;
            den += dn;
        });
    }
    if den <= 0.0 {
        return Err(EvalError::DegenerateReference("reference carries no information at any scale".into()));
    }
    Ok(num / den)
}

/// Per-position numerator and denominator contributions.
fn vif_terms(s1: f64, s2: f64, s12: f64) -> (f64, f64) {
    let s1 = s1.max(0.0);
    let s2 = s2.max(0.0);
    let mut g = s12 / (s1 + VIF_EPS);
    let mut sv = s2 - g * s12;
    let mut s1 = s1;
    if s1 < VIF_EPS {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
    }
    if s2 < VIF_EPS {
        g = 0.0;
        sv = 0.0;
    }
    if g < 0.0 {
        sv = s2;
        g = 0.0;
    }
    sv = sv.max(VIF_EPS);
    ((1.0 + g * g * s1 / (sv + VIF_SIGMA_N_SQ)).log10(), (1.0 + s1 / VIF_SIGMA_N_SQ).log10())
}

fn decimate(img: &Array2<f64>) -> Array2<f64> {
    img.slice(ndarray::s![..;2, ..;2]).to_owned()
}

/// The four metrics of one reconstruction against its reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub ssim: f64,
    pub nrmse: f64,
    pub mae: f64,
    pub vif: f64,
}

pub fn score<A: Copy + Into<f64>>(gt: ArrayView2<A>, pred: ArrayView2<A>) -> Result<Scores, EvalError> {
    Ok(Scores { ssim: ssim(gt, pred)?, nrmse: nrmse(gt, pred)?, mae: mae(gt, pred)?, vif: vif(gt, pred)? })
}
