//! Value-level compute kernels shared by the autodiff graph.
//!
//! Convolutions use zero same-padding (stride arithmetic below) so the
//! spatial extents of Eq-style feature maps are preserved at stride 1.
//! Inner loops run over the trailing (time) axis, which is contiguous
//! in row-major layout.

use crate::array::Array;

/// Output extent for zero same-padding: `ceil(input / stride)`.
pub fn same_out_len(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

/// Left pad for same-padding with effective kernel `k_eff` and stride.
pub fn same_pad_left(input: usize, k_eff: usize, stride: usize) -> isize {
    let out = same_out_len(input, stride);
    let total = ((out - 1) * stride + k_eff).saturating_sub(input);
    (total / 2) as isize
}

/// 1D convolution, same padding, stride 1.
///
/// `x`: `[c_in, t]`, `w`: `[c_out, c_in, k]`, `bias`: `[c_out]` optional.
pub fn conv1d(x: &Array, w: &Array, bias: Option<&Array>, dilation: usize) -> Array {
    let (c_in, t) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    debug_assert_eq!(w.shape()[1], c_in);
    let k_eff = dilation * (k - 1) + 1;
    let pad = same_pad_left(t, k_eff, 1);

    let mut out = Array::zeros(&[c_out, t]);
    for co in 0..c_out {
        if let Some(b) = bias {
            out.row_mut(co).fill(b.data()[co]);
        }
        for ci in 0..c_in {
            let xr = x.row(ci);
            for kk in 0..k {
                let wv = w.data()[(co * c_in + ci) * k + kk];
                if wv == 0.0 {
                    continue;
                }
                let shift = kk as isize * dilation as isize - pad;
                // out[t'] += wv * x[t' + shift] over the valid range
                let t_lo = (-shift).max(0) as usize;
                let t_hi = ((t as isize - shift).min(t as isize)).max(0) as usize;
                let or = out.row_mut(co);
                for ti in t_lo..t_hi {
                    or[ti] += wv * xr[(ti as isize + shift) as usize];
                }
            }
        }
    }
    out
}

/// Backward of [`conv1d`]; returns `(dx, dw, db)`.
pub fn conv1d_backward(
    x: &Array,
    w: &Array,
    grad_out: &Array,
    dilation: usize,
) -> (Array, Array, Array) {
    let (c_in, t) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let k_eff = dilation * (k - 1) + 1;
    let pad = same_pad_left(t, k_eff, 1);

    let mut dx = Array::zeros(&[c_in, t]);
    let mut dw = Array::zeros(&[c_out, c_in, k]);
    let mut db = Array::zeros(&[c_out]);

    for co in 0..c_out {
        let gr = grad_out.row(co);
        db.data_mut()[co] = gr.iter().sum();
        for ci in 0..c_in {
            let xr = x.row(ci);
            for kk in 0..k {
                let shift = kk as isize * dilation as isize - pad;
                let t_lo = (-shift).max(0) as usize;
                let t_hi = ((t as isize - shift).min(t as isize)).max(0) as usize;
                let wv = w.data()[(co * c_in + ci) * k + kk];
                let dxr = dx.row_mut(ci);
                let mut acc = 0.0;
                for ti in t_lo..t_hi {
                    let xi = (ti as isize + shift) as usize;
                    acc += gr[ti] * xr[xi];
                    dxr[xi] += gr[ti] * wv;
                }
                dw.data_mut()[(co * c_in + ci) * k + kk] = acc;
            }
        }
    }
    (dx, dw, db)
}

/// 2D convolution over the (frequency, time) plane, same padding.
///
/// `x`: `[c_in, f, t]`, `w`: `[c_out, c_in, kf, kt]`, stride applies to
/// the frequency axis only (time stride is always 1 in this model).
pub fn conv2d(x: &Array, w: &Array, bias: Option<&Array>, stride_f: usize) -> Array {
    let (c_in, f, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kf, kt) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    debug_assert_eq!(w.shape()[1], c_in);
    let f_out = same_out_len(f, stride_f);
    let pad_f = same_pad_left(f, kf, stride_f);
    let pad_t = same_pad_left(t, kt, 1);

    let mut out = Array::zeros(&[c_out, f_out, t]);
    for co in 0..c_out {
        if let Some(b) = bias {
            let bv = b.data()[co];
            for fo in 0..f_out {
                out.lane_mut(co, fo).fill(bv);
            }
        }
        for ci in 0..c_in {
            for dkf in 0..kf {
                for dkt in 0..kt {
                    let wv = w.data()[((co * c_in + ci) * kf + dkf) * kt + dkt];
                    if wv == 0.0 {
                        continue;
                    }
                    let t_shift = dkt as isize - pad_t;
                    let t_lo = (-t_shift).max(0) as usize;
                    let t_hi = ((t as isize - t_shift).min(t as isize)).max(0) as usize;
                    for fo in 0..f_out {
                        let fi = fo as isize * stride_f as isize + dkf as isize - pad_f;
                        if fi < 0 || fi >= f as isize {
                            continue;
                        }
                        let xr = x.lane(ci, fi as usize);
                        let or = out.lane_mut(co, fo);
                        for ti in t_lo..t_hi {
                            or[ti] += wv * xr[(ti as isize + t_shift) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`conv2d`]; returns `(dx, dw, db)`.
pub fn conv2d_backward(
    x: &Array,
    w: &Array,
    grad_out: &Array,
    stride_f: usize,
) -> (Array, Array, Array) {
    let (c_in, f, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kf, kt) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let f_out = same_out_len(f, stride_f);
    let pad_f = same_pad_left(f, kf, stride_f);
    let pad_t = same_pad_left(t, kt, 1);

    let mut dx = Array::zeros(&[c_in, f, t]);
    let mut dw = Array::zeros(&[c_out, c_in, kf, kt]);
    let mut db = Array::zeros(&[c_out]);

    for co in 0..c_out {
        let mut bacc = 0.0;
        for fo in 0..f_out {
            bacc += grad_out.lane(co, fo).iter().sum::<f64>();
        }
        db.data_mut()[co] = bacc;
        for ci in 0..c_in {
            for dkf in 0..kf {
                for dkt in 0..kt {
                    let t_shift = dkt as isize - pad_t;
                    let t_lo = (-t_shift).max(0) as usize;
                    let t_hi = ((t as isize - t_shift).min(t as isize)).max(0) as usize;
                    let wv = w.data()[((co * c_in + ci) * kf + dkf) * kt + dkt];
                    let mut wacc = 0.0;
                    for fo in 0..f_out {
                        let fi = fo as isize * stride_f as isize + dkf as isize - pad_f;
                        if fi < 0 || fi >= f as isize {
                            continue;
                        }
                        let gr = grad_out.lane(co, fo);
                        let xr = x.lane(ci, fi as usize);
                        let dxr = dx.lane_mut(ci, fi as usize);
                        for ti in t_lo..t_hi {
                            let xi = (ti as isize + t_shift) as usize;
                            wacc += gr[ti] * xr[xi];
                            dxr[xi] += gr[ti] * wv;
                        }
                    }
                    dw.data_mut()[((co * c_in + ci) * kf + dkf) * kt + dkt] = wacc;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Numerically-stable softmax along `axis`.
pub fn softmax(x: &Array, axis: usize) -> Array {
    let shape = x.shape();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = Array::zeros(shape);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let mut m = f64::NEG_INFINITY;
            for j in 0..n {
                m = m.max(x.data()[idx(j)]);
            }
            let mut sum = 0.0;
            for j in 0..n {
                let e = (x.data()[idx(j)] - m).exp();
                out.data_mut()[idx(j)] = e;
                sum += e;
            }
            for j in 0..n {
                out.data_mut()[idx(j)] /= sum;
            }
        }
    }
    out
}

/// y = W x for `w`: `[rows, cols]`, `x`: `[cols]`.
pub fn matvec(w: &Array, x: &Array) -> Array {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(x.len(), cols);
    let mut out = Array::zeros(&[rows]);
    for r in 0..rows {
        out.data_mut()[r] = w.row(r)
            .iter()
            .zip(x.data())
            .map(|(a, b)| a * b)
            .sum();
    }
    out
}

/// C = A B for `a`: `[m, k]`, `b`: `[k, n]`.
pub fn matmul(a: &Array, b: &Array) -> Array {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    debug_assert_eq!(b.shape()[0], k);
    let mut out = Array::zeros(&[m, n]);
    for i in 0..m {
        for p in 0..k {
            let av = a.at2(i, p);
            if av == 0.0 {
                continue;
            }
            let br = b.row(p);
            let or = out.row_mut(i);
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
    out
}

/// Mean of `x` along every axis except `kept`, producing a vector of
/// length `shape[kept]`.
pub fn mean_over_others(x: &Array, kept: usize) -> Array {
    let s = sum_over_others(x, kept);
    let count = (x.len() / x.shape()[kept]) as f64;
    s.map(|v| v / count)
}

/// Sum of `x` along every axis except `kept`.
pub fn sum_over_others(x: &Array, kept: usize) -> Array {
    let shape = x.shape();
    let n = shape[kept];
    let inner: usize = shape[kept + 1..].iter().product();
    let outer: usize = shape[..kept].iter().product();
    let mut out = Array::zeros(&[n]);
    for o in 0..outer {
        for j in 0..n {
            let base = (o * n + j) * inner;
            out.data_mut()[j] += x.data()[base..base + inner].iter().sum::<f64>();
        }
    }
    out
}

/// Linear interpolation of `x` at fractional positions `i / factor`,
/// clamped at the last sample. `factor >= 1` stretches the signal.
pub fn linear_resample(x: &[f64], factor: f64) -> Vec<f64> {
    let n = x.len();
    let out_len = (factor * n as f64).round() as usize;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 / factor;
        let lo = pos.floor() as usize;
        if lo + 1 >= n {
            out.push(x[n - 1]);
        } else {
            let frac = pos - lo as f64;
            out.push(x[lo] * (1.0 - frac) + x[lo + 1] * frac);
        }
    }
    out
}

/// Nearest-neighbour counterpart of [`linear_resample`].
pub fn nearest_resample(x: &[f64], factor: f64) -> Vec<f64> {
    let n = x.len();
    let out_len = (factor * n as f64).round() as usize;
    (0..out_len)
        .map(|i| x[((i as f64 / factor).round() as usize).min(n - 1)])
        .collect()
}
