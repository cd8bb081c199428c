//! Raw forward and vector-Jacobian kernels behind the graph operators.
//!
//! All reductions accumulate in a fixed sequential order so identical inputs
//! give bit-identical outputs.

use crate::tensor::{Shape, Tensor};

#[inline]
/// Neumaier-compensated sum; keeps long reductions near one rounding.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

pub(crate) fn conv_extent(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

pub(crate) fn conv2d_forward(x: &Tensor, k: &Tensor, b: &Tensor, g: ConvGeom) -> Tensor {
    let xs = x.shape();
    let ks = k.shape();
    let (oh, ow) = (
        conv_extent(xs.h, ks.h, g.stride, g.pad),
        conv_extent(xs.w, ks.w, g.stride, g.pad),
    );
    let os = Shape::new(xs.n, ks.n, oh, ow);
    let mut out = vec![0.0; os.len()];
    let (xd, kd, bd) = (x.data(), k.data(), b.data());
    for n in 0..xs.n {
        for co in 0..ks.n {
            let obase = os.index(n, co, 0, 0);
            let oplane = &mut out[obase..obase + oh * ow];
            oplane.fill(bd[co]);
            for ci in 0..xs.c {
                let xbase = xs.index(n, ci, 0, 0);
                for ky in 0..ks.h {
                    for kx in 0..ks.w {
                        let wv = kd[ks.index(co, ci, ky, kx)];
                        for oy in 0..oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * xs.w;
                            let orow = oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                oplane[orow + ox] += wv * xd[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(os, out).expect("conv output shape")
}

/// Returns `(dx, dk, db)` for an upstream gradient `go` of the conv output.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    go: &[f64],
    g: ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let xs = x.shape();
    let ks = k.shape();
    let (oh, ow) = (
        conv_extent(xs.h, ks.h, g.stride, g.pad),
        conv_extent(xs.w, ks.w, g.stride, g.pad),
    );
    let os = Shape::new(xs.n, ks.n, oh, ow);
    let mut dx = vec![0.0; xs.len()];
    let mut dk = vec![0.0; ks.len()];
    let mut db = vec![0.0; ks.n];
    let (xd, kd) = (x.data(), k.data());
    for n in 0..xs.n {
        for co in 0..ks.n {
            let obase = os.index(n, co, 0, 0);
            let gplane = &go[obase..obase + oh * ow];
            db[co] += gplane.iter().sum::<f64>();
            for ci in 0..xs.c {
                let xbase = xs.index(n, ci, 0, 0);
                for ky in 0..ks.h {
                    for kx in 0..ks.w {
                        let kidx = ks.index(co, ci, ky, kx);
                        let wv = kd[kidx];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * xs.w;
                            let orow = oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                let gv = gplane[orow + ox];
                                let xi = xrow + ix as usize;
                                acc += gv * xd[xi];
                                dx[xi] += gv * wv;
                            }
                        }
                        dk[kidx] += acc;
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

/// Per-channel 3x3 convolution, stride 2, one pixel of zero padding.
pub(crate) fn depthwise_s2_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
    let xs = x.shape();
    let (oh, ow) = (conv_extent(xs.h, 3, 2, 1), conv_extent(xs.w, 3, 2, 1));
    let os = Shape::new(xs.n, xs.c, oh, ow);
    let mut out = vec![0.0; os.len()];
    let (xd, kd, bd) = (x.data(), k.data(), b.data());
    for n in 0..xs.n {
        for c in 0..xs.c {
            let xbase = xs.index(n, c, 0, 0);
            let obase = os.index(n, c, 0, 0);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bd[c];
                    for ky in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= xs.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix < 0 || ix >= xs.w as isize {
                                continue;
                            }
                            acc += kd[c * 9 + ky * 3 + kx]
                                * xd[xbase + iy as usize * xs.w + ix as usize];
                        }
                    }
                    out[obase + oy * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(os, out).expect("depthwise output shape")
}

pub(crate) fn depthwise_s2_backward(
    x: &Tensor,
    k: &Tensor,
    go: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let xs = x.shape();
    let (oh, ow) = (conv_extent(xs.h, 3, 2, 1), conv_extent(xs.w, 3, 2, 1));
    let os = Shape::new(xs.n, xs.c, oh, ow);
    let mut dx = vec![0.0; xs.len()];
    let mut dk = vec![0.0; xs.c * 9];
    let mut db = vec![0.0; xs.c];
    let (xd, kd) = (x.data(), k.data());
    for n in 0..xs.n {
        for c in 0..xs.c {
            let xbase = xs.index(n, c, 0, 0);
            let obase = os.index(n, c, 0, 0);
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = go[obase + oy * ow + ox];
                    db[c] += gv;
                    for ky in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= xs.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix < 0 || ix >= xs.w as isize {
                                continue;
                            }
                            let xi = xbase + iy as usize * xs.w + ix as usize;
                            dk[c * 9 + ky * 3 + kx] += gv * xd[xi];
                            dx[xi] += gv * kd[c * 9 + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

/// 2x2 max pooling; returns the output and, per output cell, the flat input
/// index of the selected maximum (first occurrence on ties).
pub(crate) fn max_pool2_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let xs = x.shape();
    let os = Shape::new(xs.n, xs.c, xs.h / 2, xs.w / 2);
    let mut out = Vec::with_capacity(os.len());
    let mut arg = Vec::with_capacity(os.len());
    let xd = x.data();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best = xs.index(n, c, 2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = xs.index(n, c, 2 * oy + dy, 2 * ox + dx);
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best);
                }
            }
        }
    }
    (Tensor::new(os, out).expect("pool output shape"), arg)
}

/// Source taps for half-pixel-centred 2x upsampling of an axis of length `len`:
/// `(lo, hi, weight_hi)` per output coordinate.
pub(crate) fn upsample_taps(len: usize) -> Vec<(usize, usize, f64)> {
    let max = (len - 1) as f64;
    (0..2 * len)
        .map(|d| {
            let s = ((d as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, max);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub(crate) fn upsample2x_forward(x: &Tensor) -> Tensor {
    let xs = x.shape();
    let os = Shape::new(xs.n, xs.c, 2 * xs.h, 2 * xs.w);
    let ty = upsample_taps(xs.h);
    let tx = upsample_taps(xs.w);
    let xd = x.data();
    let mut out = Vec::with_capacity(os.len());
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = xs.index(n, c, 0, 0);
            for &(y0, y1, wy) in &ty {
                for &(x0, x1, wx) in &tx {
                    let a = xd[base + y0 * xs.w + x0];
                    let b = xd[base + y0 * xs.w + x1];
                    let c2 = xd[base + y1 * xs.w + x0];
                    let d = xd[base + y1 * xs.w + x1];
                    let top = a * (1.0 - wx) + b * wx;
                    let bot = c2 * (1.0 - wx) + d * wx;
                    out.push(top * (1.0 - wy) + bot * wy);
                }
            }
        }
    }
    Tensor::new(os, out).expect("upsample output shape")
}

pub(crate) fn upsample2x_backward(xs: Shape, go: &[f64]) -> Vec<f64> {
    let ty = upsample_taps(xs.h);
    let tx = upsample_taps(xs.w);
    let mut dx = vec![0.0; xs.len()];
    let mut gi = 0;
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = xs.index(n, c, 0, 0);
            for &(y0, y1, wy) in &ty {
                for &(x0, x1, wx) in &tx {
                    let g = go[gi];
                    gi += 1;
                    dx[base + y0 * xs.w + x0] += g * (1.0 - wy) * (1.0 - wx);
                    dx[base + y0 * xs.w + x1] += g * (1.0 - wy) * wx;
                    dx[base + y1 * xs.w + x0] += g * wy * (1.0 - wx);
                    dx[base + y1 * xs.w + x1] += g * wy * wx;
                }
            }
        }
    }
    dx
}

pub(crate) fn softmax_channels(x: &Tensor) -> Tensor {
    let s = x.shape();
    let plane = s.plane();
    let xd = x.data();
    let mut out = vec![0.0; s.len()];
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut m = f64::NEG_INFINITY;
            for c in 0..s.c {
                m = m.max(xd[base + c * plane + p]);
            }
            let mut z = 0.0;
            for c in 0..s.c {
                let e = (xd[base + c * plane + p] - m).exp();
                out[base + c * plane + p] = e;
                z += e;
            }
            for c in 0..s.c {
                out[base + c * plane + p] /= z;
            }
        }
    }
    Tensor::new(s, out).expect("softmax shape")
}

pub(crate) fn softmax_channels_backward(y: &Tensor, go: &[f64]) -> Vec<f64> {
    let s = y.shape();
    let plane = s.plane();
    let yd = y.data();
    let mut dx = vec![0.0; s.len()];
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut dot = 0.0;
            for c in 0..s.c {
                let i = base + c * plane + p;
                dot += go[i] * yd[i];
            }
            for c in 0..s.c {
                let i = base + c * plane + p;
                dx[i] = yd[i] * (go[i] - dot);
            }
        }
    }
    dx
}

/// Cached per-plane statistics of a spatial normalisation.
#[derive(Clone, Debug)]
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn spatial_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> (Tensor, NormCache) {
    let s = x.shape();
    let m = s.plane();
    let xd = x.data();
    let mut xhat = vec![0.0; s.len()];
    let mut out = vec![0.0; s.len()];
    let mut inv_std = Vec::with_capacity(s.n * s.c);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = s.index(n, c, 0, 0);
            let plane = &xd[base..base + m];
            let mean = plane.iter().sum::<f64>() / m as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            let (g, b) = (gamma.data()[c], beta.data()[c]);
            for i in 0..m {
                let h = (plane[i] - mean) * is;
                xhat[base + i] = h;
                out[base + i] = g * h + b;
            }
        }
    }
    (
        Tensor::new(s, out).expect("norm shape"),
        NormCache { xhat, inv_std },
    )
}

pub(crate) fn spatial_norm_backward(
    s: Shape,
    gamma: &Tensor,
    cache: &NormCache,
    go: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = s.plane();
    let mf = m as f64;
    let mut dx = vec![0.0; s.len()];
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = s.index(n, c, 0, 0);
            let g = gamma.data()[c];
            let is = cache.inv_std[n * s.c + c];
            let mut sum_dh = 0.0;
            let mut sum_dh_h = 0.0;
            for i in 0..m {
                let gv = go[base + i];
                let h = cache.xhat[base + i];
                dgamma[c] += gv * h;
                dbeta[c] += gv;
                let dh = gv * g;
                sum_dh += dh;
                sum_dh_h += dh * h;
            }
            for i in 0..m {
                let dh = go[base + i] * g;
                let h = cache.xhat[base + i];
                dx[base + i] = is / mf * (mf * dh - sum_dh - h * sum_dh_h);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Index of `b`'s element paired with output element (n,c,y,x) when `b` is
/// broadcast against shape `a` (each of b's C/H/W extents equals a's or is 1).
#[inline]
pub(crate) fn bcast_index(a: Shape, b: Shape, n: usize, c: usize, y: usize, x: usize) -> usize {
    let bc = if b.c == 1 { 0 } else { c };
    let by = if b.h == 1 { 0 } else { y };
    let bx = if b.w == 1 { 0 } else { x };
    debug_assert!(b.n == a.n);
    b.index(n, bc, by, bx)
}

pub(crate) fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    let plane = sa.plane();
    let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut out = Vec::with_capacity(os.len());
    for n in 0..sa.n {
        out.extend_from_slice(&a.data()[n * sa.c * plane..(n + 1) * sa.c * plane]);
        out.extend_from_slice(&b.data()[n * sb.c * plane..(n + 1) * sb.c * plane]);
    }
    Tensor::new(os, out).expect("concat shape")
}

pub(crate) fn split_channels(go: &[f64], sa: Shape, sb: Shape) -> (Vec<f64>, Vec<f64>) {
    let plane = sa.plane();
    let mut da = Vec::with_capacity(sa.len());
    let mut db = Vec::with_capacity(sb.len());
    let stride = (sa.c + sb.c) * plane;
    for n in 0..sa.n {
        let base = n * stride;
        da.extend_from_slice(&go[base..base + sa.c * plane]);
        db.extend_from_slice(&go[base + sa.c * plane..base + stride]);
    }
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_for_two_samples() {
        let t = upsample_taps(2);
        assert_eq!(t[0], (0, 1, 0.0));
        assert_eq!(t[1], (0, 1, 0.25));
        assert_eq!(t[2], (0, 1, 0.75));
        assert_eq!(t[3], (1, 1, 0.0));
    }

    #[test]
    fn single_sample_axis_replicates() {
        let t = upsample_taps(1);
        assert!(t.iter().all(|&(lo, hi, w)| lo == 0 && hi == 0 && w == 0.0));
    }

    #[test]
    fn conv_extent_same_padding() {
        for h in 1..40 {
            assert_eq!(conv_extent(h, 3, 1, 1), h);
            assert_eq!(conv_extent(h, 3, 2, 1), h.div_ceil(2));
            assert_eq!(conv_extent(h, 1, 1, 0), h);
        }
    }
}
