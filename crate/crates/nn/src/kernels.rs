//! Forward and backward kernels on plain tensors.
//!
//! Everything here is stateless. The [`crate::Eval`] backend calls the
//! forward halves directly; the [`crate::Tape`] also uses the backward halves.

use crate::float::gemm;
use crate::{Float, Shape, Tensor};

/// Geometry of a 2D convolution with square stride and symmetric padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self, len: usize, k: usize) -> usize {
        assert!(len + 2 * self.pad >= k, "kernel {k} larger than padded input {len}");
        (len + 2 * self.pad - k) / self.stride + 1
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<F: Float>(
    x: &[F],
    (cin, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    g: ConvGeom,
    (ho, wo): (usize, usize),
    cols: &mut [F],
) {
    let plane = ho * wo;
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * plane;
                for oy in 0..ho {
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &x[(c * h + iy as usize) * w..][..w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { F::zero() };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<F: Float>(
    cols: &[F],
    (cin, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    g: ConvGeom,
    (ho, wo): (usize, usize),
    x: &mut [F],
) {
    let plane = ho * wo;
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * plane;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut x[(c * h + iy as usize) * w..][..w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn check_conv<F: Float>(x: &Tensor<F>, w: &Tensor<F>, b: Option<&Tensor<F>>) {
    let (xs, ws) = (x.shape(), w.shape());
    assert_eq!(xs.c, ws.c, "conv2d: input has {} channels, kernel expects {}", xs.c, ws.c);
    if let Some(b) = b {
        assert_eq!(b.len(), ws.n, "conv2d: bias length {} for {} filters", b.len(), ws.n);
    }
}

pub fn conv2d<F: Float>(x: &Tensor<F>, w: &Tensor<F>, b: Option<&Tensor<F>>, g: ConvGeom) -> Tensor<F> {
    check_conv(x, w, b);
    let (xs, ws) = (x.shape(), w.shape());
    let (ho, wo) = (g.out_len(xs.h, ws.h), g.out_len(xs.w, ws.w));
    let ckk = ws.c * ws.h * ws.w;
    let out_shape = Shape::new(xs.n, ws.n, ho, wo);
    let mut out = vec![F::zero(); out_shape.numel()];
    let mut cols = vec![F::zero(); ckk * ho * wo];
    let in_per = xs.c * xs.plane();
    let out_per = ws.n * ho * wo;
    for n in 0..xs.n {
        im2col(&x.data()[n * in_per..(n + 1) * in_per], (xs.c, xs.h, xs.w), (ws.h, ws.w), g, (ho, wo), &mut cols);
        let o = &mut out[n * out_per..(n + 1) * out_per];
        if let Some(b) = b {
            for (co, chunk) in o.chunks_mut(ho * wo).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let beta = if b.is_some() { F::one() } else { F::zero() };
        gemm(ws.n, ckk, ho * wo, w.data(), false, &cols, false, beta, o);
    }
    Tensor::from_vec(out_shape, out)
}

/// Gradients of a convolution; each output is computed only when requested.
pub struct ConvGrads<F> {
    pub dx: Option<Tensor<F>>,
    pub dw: Option<Tensor<F>>,
    pub db: Option<Tensor<F>>,
}

pub fn conv2d_backward<F: Float>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    grad_out: &Tensor<F>,
    g: ConvGeom,
    (need_dx, need_dw, need_db): (bool, bool, bool),
) -> ConvGrads<F> {
    let (xs, ws, gs) = (x.shape(), w.shape(), grad_out.shape());
    let (ho, wo) = (gs.h, gs.w);
    let ckk = ws.c * ws.h * ws.w;
    let in_per = xs.c * xs.plane();
    let out_per = ws.n * ho * wo;
    let mut dx = need_dx.then(|| vec![F::zero(); xs.numel()]);
    let mut dw = need_dw.then(|| vec![F::zero(); ws.numel()]);
    let mut db = need_db.then(|| vec![F::zero(); ws.n]);
    let mut cols = vec![F::zero(); ckk * ho * wo];
    for n in 0..xs.n {
        let go = &grad_out.data()[n * out_per..(n + 1) * out_per];
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[n * in_per..(n + 1) * in_per], (xs.c, xs.h, xs.w), (ws.h, ws.w), g, (ho, wo), &mut cols);
            gemm(ws.n, ho * wo, ckk, go, false, &cols, true, F::one(), dw);
        }
        if let Some(db) = db.as_mut() {
            for (co, chunk) in go.chunks(ho * wo).enumerate() {
                db[co] = db[co] + chunk.iter().copied().sum::<F>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            gemm(ckk, ws.n, ho * wo, w.data(), true, go, false, F::zero(), &mut cols);
            col2im(&cols, (xs.c, xs.h, xs.w), (ws.h, ws.w), g, (ho, wo), &mut dx[n * in_per..(n + 1) * in_per]);
        }
    }
    ConvGrads {
        dx: dx.map(|d| Tensor::from_vec(xs, d)),
        dw: dw.map(|d| Tensor::from_vec(ws, d)),
        db: db.map(|d| Tensor::from_vec(Shape::vector(ws.n), d)),
    }
}

pub fn leaky_relu<F: Float>(x: &Tensor<F>, slope: F) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { v * slope })
}

/// Backward through a leaky ReLU given its *output* (sign-equivalent to the
/// input whenever `slope >= 0`).
pub fn leaky_relu_backward<F: Float>(y: &Tensor<F>, grad: &Tensor<F>, slope: F) -> Tensor<F> {
    y.zip_map(grad, |v, g| if v > F::zero() { g } else { g * slope })
}

pub fn concat_channels<F: Float>(xs: &[&Tensor<F>]) -> Tensor<F> {
    assert!(!xs.is_empty(), "concat of nothing");
    let s0 = xs[0].shape();
    let mut c_total = 0;
    for x in xs {
        let s = x.shape();
        assert_eq!((s.n, s.h, s.w), (s0.n, s0.h, s0.w), "concat: mismatched {s} vs {s0}");
        c_total += s.c;
    }
    let shape = Shape::new(s0.n, c_total, s0.h, s0.w);
    let mut out = Vec::with_capacity(shape.numel());
    for n in 0..s0.n {
        for x in xs {
            let per = x.shape().c * s0.plane();
            out.extend_from_slice(&x.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(shape, out)
}

/// Split a channel-concatenated gradient back into per-input pieces.
pub fn split_channels<F: Float>(grad: &Tensor<F>, channels: &[usize]) -> Vec<Tensor<F>> {
    let s = grad.shape();
    let plane = s.plane();
    let mut parts: Vec<Vec<F>> = channels.iter().map(|&c| Vec::with_capacity(s.n * c * plane)).collect();
    let mut offset = 0;
    for n in 0..s.n {
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad.data()[offset..offset + c * plane]);
            offset += c * plane;
        }
        debug_assert_eq!(offset, (n + 1) * s.c * plane);
    }
    parts.into_iter().zip(channels).map(|(p, &c)| Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), p)).collect()
}

pub fn upsample_nearest2x<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    let s = x.shape();
    let (h2, w2) = (s.h * 2, s.w * 2);
    let mut out = Vec::with_capacity(s.n * s.c * h2 * w2);
    for plane in x.data().chunks(s.plane()) {
        for oy in 0..h2 {
            let row = &plane[(oy / 2) * s.w..][..s.w];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, h2, w2), out)
}

pub fn upsample_nearest2x_backward<F: Float>(grad: &Tensor<F>) -> Tensor<F> {
    let s = grad.shape();
    let (h, w) = (s.h / 2, s.w / 2);
    let mut out = vec![F::zero(); s.n * s.c * h * w];
    for (dst, src) in out.chunks_mut(h * w).zip(grad.data().chunks(s.plane())) {
        for oy in 0..s.h {
            for ox in 0..s.w {
                let d = &mut dst[(oy / 2) * w + ox / 2];
                *d = *d + src[oy * s.w + ox];
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, h, w), out)
}

/// Two-tap interpolation table for half-pixel-centred linear resampling
/// from `len` samples to `2 * len` (the `align_corners = false` convention).
fn linear2x_taps<F: Float>(len: usize) -> Vec<(usize, usize, F, F)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let frac = src - i0 as f64;
            (i0, i1, F::lit(1.0 - frac), F::lit(frac))
        })
        .collect()
}

pub fn upsample_bilinear2x<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    let s = x.shape();
    let (h2, w2) = (s.h * 2, s.w * 2);
    let ty = linear2x_taps::<F>(s.h);
    let tx = linear2x_taps::<F>(s.w);
    let mut out = Vec::with_capacity(s.n * s.c * h2 * w2);
    let mut rows = vec![F::zero(); s.h * w2];
    for plane in x.data().chunks(s.plane()) {
        for y in 0..s.h {
            for (ox, &(i0, i1, a, b)) in tx.iter().enumerate() {
                rows[y * w2 + ox] = a * plane[y * s.w + i0] + b * plane[y * s.w + i1];
            }
        }
        for &(i0, i1, a, b) in &ty {
            for ox in 0..w2 {
                out.push(a * rows[i0 * w2 + ox] + b * rows[i1 * w2 + ox]);
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, h2, w2), out)
}

pub fn upsample_bilinear2x_backward<F: Float>(grad: &Tensor<F>) -> Tensor<F> {
    let s = grad.shape();
    let (h, w) = (s.h / 2, s.w / 2);
    let ty = linear2x_taps::<F>(h);
    let tx = linear2x_taps::<F>(w);
    let mut out = vec![F::zero(); s.n * s.c * h * w];
    let mut rows = vec![F::zero(); h * s.w];
    for (dst, src) in out.chunks_mut(h * w).zip(grad.data().chunks(s.plane())) {
        rows.fill(F::zero());
        for (oy, &(i0, i1, a, b)) in ty.iter().enumerate() {
            for ox in 0..s.w {
                let g = src[oy * s.w + ox];
                rows[i0 * s.w + ox] = rows[i0 * s.w + ox] + a * g;
                rows[i1 * s.w + ox] = rows[i1 * s.w + ox] + b * g;
            }
        }
        for y in 0..h {
            for (ox, &(i0, i1, a, b)) in tx.iter().enumerate() {
                let g = rows[y * s.w + ox];
                dst[y * w + i0] = dst[y * w + i0] + a * g;
                dst[y * w + i1] = dst[y * w + i1] + b * g;
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, h, w), out)
}

/// 2x2 stride-2 max pooling. Returns the pooled tensor and, for each output
/// element, the flat input index it came from.
pub fn max_pool2x2<F: Float>(x: &Tensor<F>) -> (Tensor<F>, Vec<u32>) {
    let s = x.shape();
    let (ho, wo) = (s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(s.n * s.c * ho * wo);
    let mut arg = Vec::with_capacity(s.n * s.c * ho * wo);
    for (p, plane) in x.data().chunks(s.plane()).enumerate() {
        let base = p * s.plane();
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = 2 * oy * s.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (2 * oy + dy) * s.w + 2 * ox + dx;
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
                out.push(plane[best]);
                arg.push((base + best) as u32);
            }
        }
    }
    (Tensor::from_vec(Shape::new(s.n, s.c, ho, wo), out), arg)
}

pub fn max_pool2x2_backward<F: Float>(input_shape: Shape, argmax: &[u32], grad: &Tensor<F>) -> Tensor<F> {
    let mut out = vec![F::zero(); input_shape.numel()];
    for (&i, &g) in argmax.iter().zip(grad.data()) {
        out[i as usize] = out[i as usize] + g;
    }
    Tensor::from_vec(input_shape, out)
}

pub fn repeat_channels<F: Float>(x: &Tensor<F>, times: usize) -> Tensor<F> {
    let s = x.shape();
    let per = s.c * s.plane();
    let mut out = Vec::with_capacity(per * times * s.n);
    for item in x.data().chunks(per) {
        for _ in 0..times {
            out.extend_from_slice(item);
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c * times, s.h, s.w), out)
}

pub fn repeat_channels_backward<F: Float>(grad: &Tensor<F>, times: usize) -> Tensor<F> {
    let s = grad.shape();
    let c = s.c / times;
    let per = c * s.plane();
    let mut out = vec![F::zero(); s.n * per];
    for (n, dst) in out.chunks_mut(per).enumerate() {
        for t in 0..times {
            let src = &grad.data()[(n * times + t) * per..][..per];
            for (d, &g) in dst.iter_mut().zip(src) {
                *d = *d + g;
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), out)
}

/// `y[:, c] = x[:, c] * scale[c] + shift[c]`.
pub fn channel_affine<F: Float>(x: &Tensor<F>, scale: &[F], shift: &[F]) -> Tensor<F> {
    let s = x.shape();
    assert_eq!(scale.len(), s.c, "channel_affine: {} scales for {} channels", scale.len(), s.c);
    assert_eq!(shift.len(), s.c);
    let mut out = x.clone();
    for (i, plane) in out.data_mut().chunks_mut(s.plane()).enumerate() {
        let c = i % s.c;
        for v in plane {
            *v = *v * scale[c] + shift[c];
        }
    }
    out
}

pub fn channel_scale_backward<F: Float>(grad: &Tensor<F>, scale: &[F]) -> Tensor<F> {
    channel_affine(grad, scale, &vec![F::zero(); scale.len()])
}

/// Top singular value estimate `u^T W v` of a kernel unrolled to
/// `(out, in * kh * kw)`.
pub fn bilinear_form<F: Float>(w: &Tensor<F>, u: &[F], v: &[F]) -> F {
    let rows = w.shape().n;
    let cols = w.len() / rows;
    assert_eq!(u.len(), rows);
    assert_eq!(v.len(), cols);
    w.data().chunks(cols).zip(u).map(|(row, &ui)| ui * row.iter().zip(v).map(|(&a, &b)| a * b).sum::<F>()).sum()
}

/// Gradient of `W / (u^T W v)` with `u`, `v` held constant.
pub fn spectral_normalize_backward<F: Float>(w: &Tensor<F>, u: &[F], v: &[F], sigma: F, grad: &Tensor<F>) -> Tensor<F> {
    let cols = v.len();
    let inner: F = grad.data().iter().zip(w.data()).map(|(&g, &x)| g * x).sum();
    let coef = inner / (sigma * sigma);
    let mut out = grad.map(|g| g / sigma);
    for (i, row) in out.data_mut().chunks_mut(cols).enumerate() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = *r - coef * u[i] * v[j];
        }
    }
    out
}

/// Numerically stable `ln(1 + e^z)`.
pub fn softplus<F: Float>(z: F) -> F {
    z.max(F::zero()) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid<F: Float>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Relativistic-average binary cross-entropy where `pos` logits are
/// pushed towards "more real than the average of `neg`" and vice versa:
///
/// `mean_i softplus(-(pos_i - mean(neg))) + mean_j softplus(neg_j - mean(pos))`
pub fn relativistic_bce<F: Float>(pos: &Tensor<F>, neg: &Tensor<F>) -> F {
    let (mp, mn) = (pos.mean(), neg.mean());
    let lp = pos.data().iter().map(|&p| softplus(-(p - mn))).sum::<F>() / F::from_usize(pos.len()).unwrap();
    let ln = neg.data().iter().map(|&n| softplus(n - mp)).sum::<F>() / F::from_usize(neg.len()).unwrap();
    lp + ln
}

/// Gradients of [`relativistic_bce`] with respect to `pos` and `neg`.
pub fn relativistic_bce_backward<F: Float>(pos: &Tensor<F>, neg: &Tensor<F>, grad: F) -> (Tensor<F>, Tensor<F>) {
    let (mp, mn) = (pos.mean(), neg.mean());
    let p = F::from_usize(pos.len()).unwrap();
    let q = F::from_usize(neg.len()).unwrap();
    let s_pos: Vec<F> = pos.data().iter().map(|&x| sigmoid(-(x - mn))).collect();
    let s_neg: Vec<F> = neg.data().iter().map(|&x| sigmoid(x - mp)).collect();
    let mean_s_pos = s_pos.iter().copied().sum::<F>() / p;
    let mean_s_neg = s_neg.iter().copied().sum::<F>() / q;
    let d_pos = s_pos.iter().map(|&s| -grad * (s + mean_s_neg) / p).collect();
    let d_neg = s_neg.iter().map(|&s| grad * (mean_s_pos + s) / q).collect();
    (Tensor::from_vec(pos.shape(), d_pos), Tensor::from_vec(neg.shape(), d_neg))
}

pub fn l1_mean<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> F {
    assert_eq!(a.shape(), b.shape(), "l1: shape mismatch {} vs {}", a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum::<F>() / F::from_usize(a.len()).unwrap()
}

/// Gradient of [`l1_mean`] with respect to `a` (negate for `b`). The
/// subgradient at zero difference is 0.
pub fn l1_mean_backward<F: Float>(a: &Tensor<F>, b: &Tensor<F>, grad: F) -> Tensor<F> {
    let scale = grad / F::from_usize(a.len()).unwrap();
    a.zip_map(b, |x, y| {
        let d = x - y;
        if d > F::zero() {
            scale
        } else if d < F::zero() {
            -scale
        } else {
            F::zero()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_vec(shape, (0..shape.numel()).map(f).collect())
    }

    fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, g: ConvGeom) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let (ho, wo) = (g.out_len(xs.h, ws.h), g.out_len(xs.w, ws.w));
        Tensor::from_fn(Shape::new(xs.n, ws.n, ho, wo), |n, co, oy, ox| {
            let mut acc = b.map_or(0.0, |b| b.data()[co]);
            for ci in 0..ws.c {
                for ki in 0..ws.h {
                    for kj in 0..ws.w {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                            acc += w.at(co, ci, ki, kj) * x.at(n, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_loops() {
        let x = t(Shape::new(2, 3, 7, 6), |i| (i as f64 * 0.731).sin());
        for (k, stride, pad) in [(3, 1, 1), (4, 2, 1), (3, 2, 1), (1, 1, 0)] {
            let w = t(Shape::new(5, 3, k, k), |i| (i as f64 * 0.173).cos());
            let b = t(Shape::vector(5), |i| i as f64 * 0.1);
            let g = ConvGeom { stride, pad };
            let got = conv2d(&x, &w, Some(&b), g);
            let want = direct_conv(&x, &w, Some(&b), g);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "k={k} s={stride}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), g> is bilinear in (x, w); its partials are the backward outputs.
        let x = t(Shape::new(2, 2, 6, 5), |i| (i as f64 * 0.37).sin());
        let w = t(Shape::new(3, 2, 4, 4), |i| (i as f64 * 0.91).cos());
        let g = ConvGeom { stride: 2, pad: 1 };
        let y = conv2d(&x, &w, None, g);
        let go = t(y.shape(), |i| (i as f64 * 0.13).sin());
        let grads = conv2d_backward(&x, &w, &go, g, (true, true, true));
        let inner = |x: &Tensor<f64>, w: &Tensor<f64>| {
            conv2d(x, w, None, g).data().iter().zip(go.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let base = inner(&x, &w);
        let dx = grads.dx.unwrap();
        let dw = grads.dw.unwrap();
        // Linear in x: <conv(x), go> == <x, dx>.
        let lin_x: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        let lin_w: f64 = w.data().iter().zip(dw.data()).map(|(a, b)| a * b).sum();
        assert!((base - lin_x).abs() < 1e-10);
        assert!((base - lin_w).abs() < 1e-10);
        let db = grads.db.unwrap();
        for co in 0..3 {
            let s: f64 = (0..2)
                .flat_map(|n| (0..y.shape().plane()).map(move |p| (n, p)))
                .map(|(n, p)| go.data()[(n * 3 + co) * y.shape().plane() + p])
                .sum();
            assert!((db.data()[co] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn resampling_backwards_are_adjoints() {
        let x = t(Shape::new(1, 2, 5, 3), |i| (i as f64 * 1.3).sin());
        for (fwd, bwd) in [
            (
                upsample_nearest2x::<f64> as fn(&Tensor<f64>) -> Tensor<f64>,
                upsample_nearest2x_backward::<f64> as fn(&Tensor<f64>) -> Tensor<f64>,
            ),
            (upsample_bilinear2x::<f64>, upsample_bilinear2x_backward::<f64>),
            (|x| repeat_channels(x, 3), |g| repeat_channels_backward(g, 3)),
        ] {
            let y = fwd(&x);
            let g = t(y.shape(), |i| (i as f64 * 0.7).cos());
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let gx = bwd(&g);
            let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_upsample_matches_half_pixel_convention() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, 4.0, 8.0]);
        let y = upsample_bilinear2x(&x);
        // Outputs sample source positions -0.25 (clamped), 0.25, 0.75, 1.25, 1.75, 2.25 (clamped).
        let row: Vec<f64> = (0..6).map(|i| y.at(0, 0, 0, i)).collect();
        assert_eq!(row, vec![0.0, 1.0, 3.0, 5.0, 7.0, 8.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 4), vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 9.0, 0.0]);
        let (y, arg) = max_pool2x2(&x);
        assert_eq!(y.data(), &[5.0, 9.0]);
        let g = max_pool2x2_backward(x.shape(), &arg, &Tensor::from_vec(y.shape(), vec![1.0, 2.0]));
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn concat_then_split_roundtrips() {
        let a = t(Shape::new(2, 1, 2, 2), |i| i as f64);
        let b = t(Shape::new(2, 3, 2, 2), |i| 100.0 + i as f64);
        let c = concat_channels(&[&a, &b]);
        assert_eq!(c.at(1, 0, 0, 0), a.at(1, 0, 0, 0));
        assert_eq!(c.at(1, 2, 1, 1), b.at(1, 1, 1, 1));
        let parts = split_channels(&c, &[1, 3]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn softplus_is_stable_for_large_arguments() {
        assert!((softplus(40.0f64) - 40.0).abs() < 1e-12);
        assert!(softplus(-40.0f64) > 0.0 && softplus(-40.0f64) < 1e-17);
        assert!(softplus(1000.0f32).is_finite());
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
