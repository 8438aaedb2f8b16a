use crate::error::{Error, Result};
use crate::numerics::macs;
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// 1-d cross-correlation ("convolution" in NN usage).
///
/// `x`: `[Cin, T]`, `w`: `[Cout, Cin/groups, K]`, `b`: `[Cout]`.
/// Output: `[Cout, T_out]`, `T_out = (T + 2*padding - K)/stride + 1`.
///
/// Zero padding is materialized so every multiply the kernel performs is one
/// of the `K * (Cin/groups) * Cout * T_out` the analytical cost model counts.
pub fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let (cin, t) = check_rank2("conv1d", x)?;
    let ws = w.shape();
    if w.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op: "conv1d weight",
            expected: vec![0, 0, 0],
            got: ws.to_vec(),
        });
    }
    let (cout, cin_g, k) = (ws[0], ws[1], ws[2]);
    if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
        return Err(Error::InvalidArgument(format!(
            "conv1d: groups {groups} incompatible with Cin {cin}, Cout {cout}, weight {ws:?}"
        )));
    }
    if stride == 0 || k == 0 || t + 2 * padding < k {
        return Err(Error::InvalidArgument(format!(
            "conv1d: kernel {k}, stride {stride}, padding {padding} invalid for input length {t}"
        )));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv1d bias",
                expected: vec![cout],
                got: b.shape().to_vec(),
            });
        }
    }

    let t_pad = t + 2 * padding;
    let t_out = (t_pad - k) / stride + 1;
    let padded = pad_time(x.as_slice(), cin, t, padding);
    let cout_g = cout / groups;

    let mut out = Tensor::zeros(vec![cout, t_out]);
    if let Some(b) = b {
        for co in 0..cout {
            out.row_mut(co).fill(b.as_slice()[co]);
        }
    }

    let mut executed = 0u64;
    for g in 0..groups {
        for co in g * cout_g..(g + 1) * cout_g {
            let orow_ptr = co * t_out;
            for ci_rel in 0..cin_g {
                let ci = g * cin_g + ci_rel;
                let xrow = &padded[ci * t_pad..(ci + 1) * t_pad];
                let wrow = &w.as_slice()[(co * cin_g + ci_rel) * k..][..k];
                let orow = &mut out.as_mut_slice()[orow_ptr..orow_ptr + t_out];
                if k == 1 && stride == 1 {
                    let wv = wrow[0];
                    for (o, &xv) in orow.iter_mut().zip(&xrow[..t_out]) {
                        *o += wv * xv;
                    }
                } else if stride == 1 {
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let xs = &xrow[kk..kk + t_out];
                        for (o, &xv) in orow.iter_mut().zip(xs) {
                            *o += wv * xv;
                        }
                    }
                } else {
                    for (to, o) in orow.iter_mut().enumerate() {
                        let base = to * stride;
                        let mut acc = T::zero();
                        for (kk, &wv) in wrow.iter().enumerate() {
                            acc += wv * xrow[base + kk];
                        }
                        *o += acc;
                    }
                }
                executed += (k * t_out) as u64;
            }
        }
    }
    macs::add(executed);
    Ok(out)
}

/// Transposed 1-d convolution (the adjoint of `conv1d` with the same
/// hyperparameters). `x`: `[Cin, T]`, `w`: `[Cin, Cout, K]`.
/// Output: `[Cout, (T-1)*stride + K - 2*padding]`.
pub fn conv_transpose1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (cin, t) = check_rank2("conv_transpose1d", x)?;
    let ws = w.shape();
    if w.rank() != 3 || ws[0] != cin {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose1d weight",
            expected: vec![cin, 0, 0],
            got: ws.to_vec(),
        });
    }
    let (cout, k) = (ws[1], ws[2]);
    if stride == 0 || k == 0 {
        return Err(Error::InvalidArgument(
            "conv_transpose1d: zero kernel or stride".into(),
        ));
    }
    let t_full = (t - 1) * stride + k;
    if t_full < 2 * padding + 1 {
        return Err(Error::InvalidArgument(format!(
            "conv_transpose1d: padding {padding} larger than produced length {t_full}"
        )));
    }
    let t_out = t_full - 2 * padding;

    let mut full = vec![T::zero(); cout * t_full];
    for ci in 0..cin {
        let xrow = x.row(ci);
        for co in 0..cout {
            let wrow = &w.as_slice()[(ci * cout + co) * k..][..k];
            let frow = &mut full[co * t_full..(co + 1) * t_full];
            for (ti, &xv) in xrow.iter().enumerate() {
                let base = ti * stride;
                for (kk, &wv) in wrow.iter().enumerate() {
                    frow[base + kk] += xv * wv;
                }
            }
        }
    }
    macs::add((cin * cout * k * t) as u64);

    let mut out = Tensor::zeros(vec![cout, t_out]);
    for co in 0..cout {
        let bias = b.map(|b| b.as_slice()[co]).unwrap_or_else(T::zero);
        let src = &full[co * t_full + padding..co * t_full + padding + t_out];
        for (o, &v) in out.row_mut(co).iter_mut().zip(src) {
            *o = v + bias;
        }
    }
    Ok(out)
}

/// 2-d convolution with square kernel, no padding.
/// `x`: `[Cin, H, W]`, `w`: `[Cout, Cin, K, K]`. Output `[Cout, H_out, W_out]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    if x.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op: "conv2d input",
            expected: vec![0, 0, 0],
            got: xs.to_vec(),
        });
    }
    let (cin, h, wd) = (xs[0], xs[1], xs[2]);
    let ws = w.shape();
    if w.rank() != 4 || ws[1] != cin || ws[2] != ws[3] {
        return Err(Error::ShapeMismatch {
            op: "conv2d weight",
            expected: vec![0, cin, 0, 0],
            got: ws.to_vec(),
        });
    }
    let (cout, k) = (ws[0], ws[2]);
    if stride == 0 || k == 0 || h < k || wd < k {
        return Err(Error::InvalidArgument(format!(
            "conv2d: kernel {k} stride {stride} invalid for {h}x{wd} input"
        )));
    }
    let ho = (h - k) / stride + 1;
    let wo = (wd - k) / stride + 1;

    let mut out = Tensor::zeros(vec![cout, ho, wo]);
    let xd = x.as_slice();
    let wdall = w.as_slice();
    let od = out.as_mut_slice();
    for co in 0..cout {
        let bias = b.map(|b| b.as_slice()[co]).unwrap_or_else(T::zero);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias;
                for ci in 0..cin {
                    let xbase = ci * h * wd;
                    let wbase = (co * cin + ci) * k * k;
                    for ky in 0..k {
                        let xrow = xbase + (oy * stride + ky) * wd + ox * stride;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            acc += xd[xrow + kx] * wdall[wrow + kx];
                        }
                    }
                }
                od[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    macs::add((cout * cin * k * k * ho * wo) as u64);
    Ok(out)
}

/// Transposed 2-d convolution, square kernel, no padding.
/// `x`: `[Cin, H, W]`, `w`: `[Cin, Cout, K, K]`.
/// Output `[Cout, (H-1)*stride + K, (W-1)*stride + K]`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    if x.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d input",
            expected: vec![0, 0, 0],
            got: xs.to_vec(),
        });
    }
    let (cin, h, wd) = (xs[0], xs[1], xs[2]);
    let ws = w.shape();
    if w.rank() != 4 || ws[0] != cin || ws[2] != ws[3] {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d weight",
            expected: vec![cin, 0, 0, 0],
            got: ws.to_vec(),
        });
    }
    let (cout, k) = (ws[1], ws[2]);
    if stride == 0 || k == 0 {
        return Err(Error::InvalidArgument(
            "conv_transpose2d: zero kernel or stride".into(),
        ));
    }
    let ho = (h - 1) * stride + k;
    let wo = (wd - 1) * stride + k;

    let mut out = Tensor::zeros(vec![cout, ho, wo]);
    let od = out.as_mut_slice();
    let xd = x.as_slice();
    let wdall = w.as_slice();
    for ci in 0..cin {
        for co in 0..cout {
            let wbase = (ci * cout + co) * k * k;
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = xd[(ci * h + iy) * wd + ix];
                    for ky in 0..k {
                        let orow = (co * ho + iy * stride + ky) * wo + ix * stride;
                        for kx in 0..k {
                            od[orow + kx] += xv * wdall[wbase + ky * k + kx];
                        }
                    }
                }
            }
        }
    }
    macs::add((cin * cout * k * k * h * wd) as u64);
    if let Some(b) = b {
        for co in 0..cout {
            let bias = b.as_slice()[co];
            for v in &mut od[co * ho * wo..(co + 1) * ho * wo] {
                *v += bias;
            }
        }
    }
    Ok(out)
}

/// Per-channel normalization over the time axis of a `[C, T]` tensor:
/// each channel is shifted/scaled to zero mean and unit variance (biased
/// variance, `eps` inside the square root), then an affine per-channel
/// gain/bias is applied. Returns `(output, normalized, inv_std)`; the two
/// extras are what the backward pass needs.
pub fn channel_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let (c, t) = check_rank2("channel_norm", x)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "channel_norm affine",
            expected: vec![c],
            got: gamma.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(vec![c, t]);
    let mut normalized = Tensor::zeros(vec![c, t]);
    let mut inv_std = Vec::with_capacity(c);
    let tn = T::from_f64(t as f64);
    for ci in 0..c {
        let row = x.row(ci);
        let mut mean = T::zero();
        for &v in row {
            mean += v;
        }
        mean = mean / tn;
        let mut var = T::zero();
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var = var / tn;
        let istd = T::one() / (var + T::from_f64(eps)).sqrt();
        inv_std.push(istd);
        let (g, b) = (gamma.as_slice()[ci], beta.as_slice()[ci]);
        let nrow = normalized.row_mut(ci);
        for (ti, &v) in row.iter().enumerate() {
            nrow[ti] = (v - mean) * istd;
        }
        let orow = out.row_mut(ci);
        for (ti, &nv) in normalized.row(ci).iter().enumerate() {
            orow[ti] = g * nv + b;
        }
    }
    macs::add(2 * (c * t) as u64);
    Ok((out, normalized, inv_std))
}

/// Nearest-neighbour resampling of the time axis of a `[C, T]` tensor to
/// `target_len`; output index `j` reads input index `floor(j*T/target)`.
pub fn nearest_interp1d<T: Scalar>(x: &Tensor<T>, target_len: usize) -> Result<Tensor<T>> {
    let (c, t) = check_rank2("nearest_interp1d", x)?;
    if target_len == 0 {
        return Err(Error::InvalidArgument(
            "nearest_interp1d: target length 0".into(),
        ));
    }
    let mut out = Tensor::zeros(vec![c, target_len]);
    for ci in 0..c {
        let src = x.row(ci);
        let dst = out.row_mut(ci);
        for (j, d) in dst.iter_mut().enumerate() {
            *d = src[source_index(j, t, target_len)];
        }
    }
    Ok(out)
}

/// Index mapping used by `nearest_interp1d`, exposed for its backward pass.
#[inline]
pub fn source_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    (dst * src_len / dst_len).min(src_len - 1)
}

/// Stack `[C_i, T]` tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat_channels: no inputs".into()));
    }
    let (_, t) = check_rank2("concat_channels", parts[0])?;
    let mut c_total = 0;
    for p in parts {
        let (c, tp) = check_rank2("concat_channels", p)?;
        if tp != t {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                expected: vec![c, t],
                got: p.shape().to_vec(),
            });
        }
        c_total += c;
    }
    let mut out = Tensor::zeros(vec![c_total, t]);
    let mut offset = 0;
    for p in parts {
        let n = p.numel();
        out.as_mut_slice()[offset..offset + n].copy_from_slice(p.as_slice());
        offset += n;
    }
    Ok(out)
}

/// Trim or zero-pad the time axis of a `[C, T]` tensor to exactly `target`.
pub fn fit_time<T: Scalar>(x: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    let (c, t) = check_rank2("fit_time", x)?;
    if target == 0 {
        return Err(Error::InvalidArgument("fit_time: target length 0".into()));
    }
    let mut out = Tensor::zeros(vec![c, target]);
    let keep = t.min(target);
    for ci in 0..c {
        out.row_mut(ci)[..keep].copy_from_slice(&x.row(ci)[..keep]);
    }
    Ok(out)
}

/// Broadcast two shapes following trailing-dimension alignment: dimensions
/// are matched from the right and must be equal or 1.
pub fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = dim_from_right(a, i);
        let db = dim_from_right(b, i);
        out[rank - 1 - i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::Broadcast {
                op,
                a: a.to_vec(),
                b: b.to_vec(),
            });
        };
    }
    Ok(out)
}

#[inline]
fn dim_from_right(shape: &[usize], i: usize) -> usize {
    if i < shape.len() {
        shape[shape.len() - 1 - i]
    } else {
        1
    }
}

/// Elementwise binary op with broadcasting. Equal shapes take a zip fast
/// path; the general path walks the output coordinates.
pub fn binary_map<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::from_vec(a.shape().to_vec(), data);
    }
    let shape = broadcast_shape(a.shape(), b.shape(), op)?;
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut coords = vec![0usize; shape.len()];
    for _ in 0..numel {
        let ia: usize = coords.iter().zip(&sa).map(|(c, s)| c * s).sum();
        let ib: usize = coords.iter().zip(&sb).map(|(c, s)| c * s).sum();
        data.push(f(a.as_slice()[ia], b.as_slice()[ib]));
        for d in (0..shape.len()).rev() {
            coords[d] += 1;
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    Tensor::from_vec(shape, data)
}

/// Per-output-dimension element strides into `shape`'s data when read as
/// `out_shape` (0 on broadcast dimensions).
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; out_shape.len()];
    let mut acc = 1usize;
    let offset = out_shape.len() - shape.len();
    for d in (0..shape.len()).rev() {
        if shape[d] != 1 {
            strides[offset + d] = acc;
        }
        acc *= shape[d];
    }
    strides
}

/// Sum `grad` (of shape `from`) down to `to`, inverting broadcasting.
pub fn reduce_to_shape<T: Scalar>(grad: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    let to_numel: usize = to.iter().product();
    if from == to {
        return grad.to_vec();
    }
    let strides = broadcast_strides(to, from);
    let mut out = vec![T::zero(); to_numel];
    let mut coords = vec![0usize; from.len()];
    for &g in grad {
        let it: usize = coords.iter().zip(&strides).map(|(c, s)| c * s).sum();
        out[it] += g;
        for d in (0..from.len()).rev() {
            coords[d] += 1;
            if coords[d] < from[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    out
}

fn check_rank2<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize)> {
    if x.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            expected: vec![0, 0],
            got: x.shape().to_vec(),
        });
    }
    Ok((x.shape()[0], x.shape()[1]))
}

/// Dot product with four independent accumulators so the additions
/// pipeline instead of forming one long dependency chain. The summation
/// order is fixed, keeping results deterministic run to run.
pub(crate) fn dot_ilp<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x4, y4) in ca.zip(cb) {
        acc[0] += x4[0] * y4[0];
        acc[1] += x4[1] * y4[1];
        acc[2] += x4[2] * y4[2];
        acc[3] += x4[3] * y4[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// Zero-pad each channel row on both ends of the time axis.
pub(crate) fn pad_time<T: Scalar>(x: &[T], c: usize, t: usize, padding: usize) -> Vec<T> {
    if padding == 0 {
        return x.to_vec();
    }
    let tp = t + 2 * padding;
    let mut out = vec![T::zero(); c * tp];
    for ci in 0..c {
        out[ci * tp + padding..ci * tp + padding + t].copy_from_slice(&x[ci * t..(ci + 1) * t]);
    }
    out
}
