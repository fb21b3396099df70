//! Forward and backward kernels on `B x C x D x H x W` activations.
//!
//! Convolutions have stride one and zero padding and run as im2col + GEMM per
//! sample; pointwise kernels skip the im2col copy.

use serde::{Deserialize, Serialize};

use crate::tensor::{gemm, Real, Tensor};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Odd kernel with "same" padding.
    pub fn same(kernel: [usize; 3]) -> Self {
        ConvGeom {
            kernel,
            pad: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
        }
    }

    pub fn volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    pub fn out_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|i| dims[i] + 2 * self.pad[i] + 1 - self.kernel[i])
    }
}

/// Max-pooling window; also used for shape bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Default for PoolGeometry {
    fn default() -> Self {
        PoolGeometry {
            kernel: [3, 3, 3],
            stride: [2, 2, 2],
            padding: [1, 1, 1],
        }
    }
}

impl PoolGeometry {
    /// Output extent per axis, or `None` if the window does not fit.
    pub fn out_dims(&self, dims: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = dims[i] + 2 * self.padding[i];
            if padded < self.kernel[i] || dims[i] == 0 {
                return None;
            }
            out[i] = (padded - self.kernel[i]) / self.stride[i] + 1;
        }
        Some(out)
    }
}

fn dims5(t: &Tensor<impl Real>) -> (usize, usize, [usize; 3]) {
    let s = t.shape();
    assert_eq!(s.len(), 5, "expected a 5-D activation, got {s:?}");
    (s[0], s[1], [s[2], s[3], s[4]])
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `k`.
#[inline]
fn tap_range(k: usize, pad: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).min(output);
    let hi = (input + pad).saturating_sub(k).min(output).max(lo);
    (lo, hi)
}

fn im2col<T: Real>(x: &[T], channels: usize, dims: [usize; 3], geom: ConvGeom, out: [usize; 3], col: &mut [T]) {
    let [d, h, w] = dims;
    let [od, oh, ow] = out;
    let [kd, kh, kw] = geom.kernel;
    let [pd, ph, pw] = geom.pad;
    let ov = od * oh * ow;
    let plane = d * h * w;
    let mut row = 0;
    for c in 0..channels {
        let xc = &x[c * plane..(c + 1) * plane];
        for kz in 0..kd {
            let (z_lo, z_hi) = tap_range(kz, pd, d, od);
            for ky in 0..kh {
                let (y_lo, y_hi) = tap_range(ky, ph, h, oh);
                for kx in 0..kw {
                    let (x_lo, x_hi) = tap_range(kx, pw, w, ow);
                    let dst = &mut col[row * ov..(row + 1) * ov];
                    for oz in 0..od {
                        for oy in 0..oh {
                            let seg = &mut dst[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                            if oz < z_lo || oz >= z_hi || oy < y_lo || oy >= y_hi {
                                seg.fill(T::zero());
                                continue;
                            }
                            let iz = oz + kz - pd;
                            let iy = oy + ky - ph;
                            seg[..x_lo].fill(T::zero());
                            seg[x_hi..].fill(T::zero());
                            let src = (iz * h + iy) * w + x_lo + kx - pw;
                            seg[x_lo..x_hi].copy_from_slice(&xc[src..src + (x_hi - x_lo)]);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], channels: usize, dims: [usize; 3], geom: ConvGeom, out: [usize; 3], dx: &mut [T]) {
    let [d, h, w] = dims;
    let [od, oh, ow] = out;
    let [kd, kh, kw] = geom.kernel;
    let [pd, ph, pw] = geom.pad;
    let ov = od * oh * ow;
    let plane = d * h * w;
    let mut row = 0;
    for c in 0..channels {
        let dxc = &mut dx[c * plane..(c + 1) * plane];
        for kz in 0..kd {
            let (z_lo, z_hi) = tap_range(kz, pd, d, od);
            for ky in 0..kh {
                let (y_lo, y_hi) = tap_range(ky, ph, h, oh);
                for kx in 0..kw {
                    let (x_lo, x_hi) = tap_range(kx, pw, w, ow);
                    let src = &col[row * ov..(row + 1) * ov];
                    for oz in z_lo..z_hi {
                        for oy in y_lo..y_hi {
                            let iz = oz + kz - pd;
                            let iy = oy + ky - ph;
                            let base = (oz * oh + oy) * ow;
                            let dst = (iz * h + iy) * w + x_lo + kx - pw;
                            for (a, &g) in dxc[dst..dst + (x_hi - x_lo)]
                                .iter_mut()
                                .zip(&src[base + x_lo..base + x_hi])
                            {
                                *a = *a + g;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `x: [B, Cin, D, H, W]`, `weight: [Cout, Cin, kd, kh, kw]`.
pub(crate) fn conv3d_forward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, geom: ConvGeom) -> Tensor<T> {
    let (b, cin, dims) = dims5(x);
    let cout = weight.shape()[0];
    let out = geom.out_dims(dims);
    let (iv, ov) = (dims.iter().product::<usize>(), out.iter().product::<usize>());
    let k = cin * geom.volume();
    let mut y = Tensor::zeros(&[b, cout, out[0], out[1], out[2]]);
    let mut col = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * ov]
    };
    for s in 0..b {
        let xs = &x.data()[s * cin * iv..(s + 1) * cin * iv];
        let ys = &mut y.data_mut()[s * cout * ov..(s + 1) * cout * ov];
        if geom.is_pointwise() {
            gemm(false, false, cout, ov, cin, T::one(), weight.data(), xs, T::zero(), ys);
        } else {
            im2col(xs, cin, dims, geom, out, &mut col);
            gemm(false, false, cout, ov, k, T::one(), weight.data(), &col, T::zero(), ys);
        }
    }
    y
}

/// Returns `(dx, dweight)`; `dx` is skipped when `need_input_grad` is false.
pub(crate) fn conv3d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    geom: ConvGeom,
    need_input_grad: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let (b, cin, dims) = dims5(x);
    let cout = weight.shape()[0];
    let out = geom.out_dims(dims);
    let (iv, ov) = (dims.iter().product::<usize>(), out.iter().product::<usize>());
    let k = cin * geom.volume();
    let mut dw = Tensor::zeros(weight.shape());
    let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
    let pointwise = geom.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * ov] };
    let mut dcol = if pointwise || !need_input_grad {
        Vec::new()
    } else {
        vec![T::zero(); k * ov]
    };
    for s in 0..b {
        let xs = &x.data()[s * cin * iv..(s + 1) * cin * iv];
        let dys = &dy.data()[s * cout * ov..(s + 1) * cout * ov];
        if pointwise {
            gemm(false, true, cout, cin, ov, T::one(), dys, xs, T::one(), dw.data_mut());
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx.data_mut()[s * cin * iv..(s + 1) * cin * iv];
                gemm(true, false, cin, ov, cout, T::one(), weight.data(), dys, T::zero(), dxs);
            }
        } else {
            im2col(xs, cin, dims, geom, out, &mut col);
            gemm(false, true, cout, k, ov, T::one(), dys, &col, T::one(), dw.data_mut());
            if let Some(dx) = dx.as_mut() {
                gemm(
                    true,
                    false,
                    k,
                    ov,
                    cout,
                    T::one(),
                    weight.data(),
                    dys,
                    T::zero(),
                    &mut dcol,
                );
                let dxs = &mut dx.data_mut()[s * cin * iv..(s + 1) * cin * iv];
                col2im(&dcol, cin, dims, geom, out, dxs);
            }
        }
    }
    (dx, dw)
}

/// Batch statistics of one normalization call.
#[derive(Clone, Debug)]
pub(crate) struct NormStats<T> {
    pub mean: Vec<T>,
    pub invstd: Vec<T>,
    /// Unbiased batch variance, for the running estimate.
    pub var_unbiased: Vec<T>,
}

fn channel_layout(x: &Tensor<impl Real>) -> (usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2..].iter().product())
}

/// Per-channel normalization with batch statistics, optionally rectified.
pub(crate) fn norm_forward_train<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    relu: bool,
) -> (Tensor<T>, NormStats<T>) {
    let (b, c, v) = channel_layout(x);
    let n = (b * v) as f64;
    let mut stats = NormStats {
        mean: Vec::with_capacity(c),
        invstd: Vec::with_capacity(c),
        var_unbiased: Vec::with_capacity(c),
    };
    for ch in 0..c {
        let mut sum = 0.0;
        for s in 0..b {
            let seg = &x.data()[(s * c + ch) * v..(s * c + ch + 1) * v];
            sum += seg.iter().map(|t| t.to_f64_lossy()).sum::<f64>();
        }
        let mean = sum / n;
        let mut sq = 0.0;
        for s in 0..b {
            let seg = &x.data()[(s * c + ch) * v..(s * c + ch + 1) * v];
            sq += seg
                .iter()
                .map(|t| {
                    let d = t.to_f64_lossy() - mean;
                    d * d
                })
                .sum::<f64>();
        }
        let var = sq / n;
        stats.mean.push(T::from_f64_lossy(mean));
        stats.invstd.push(T::from_f64_lossy(1.0 / (var + BN_EPS).sqrt()));
        stats
            .var_unbiased
            .push(T::from_f64_lossy(if n > 1.0 { sq / (n - 1.0) } else { var }));
    }
    let y = norm_apply(x, gamma, beta, &stats.mean, &stats.invstd, relu);
    (y, stats)
}

pub(crate) fn norm_forward_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    relu: bool,
) -> (Tensor<T>, Vec<T>) {
    let eps = T::from_f64_lossy(BN_EPS);
    let invstd: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    (norm_apply(x, gamma, beta, running_mean, &invstd, relu), invstd)
}

fn norm_apply<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T], mean: &[T], invstd: &[T], relu: bool) -> Tensor<T> {
    let (b, c, v) = channel_layout(x);
    let mut y = Tensor::zeros(x.shape());
    for s in 0..b {
        for ch in 0..c {
            let range = (s * c + ch) * v..(s * c + ch + 1) * v;
            let scale = gamma[ch] * invstd[ch];
            let shift = beta[ch] - mean[ch] * scale;
            for (o, &i) in y.data_mut()[range.clone()].iter_mut().zip(&x.data()[range]) {
                let t = i * scale + shift;
                *o = if relu && t < T::zero() { T::zero() } else { t };
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`. `y` is the forward output, used for the
/// rectifier mask.
#[allow(clippy::too_many_arguments)]
pub(crate) fn norm_backward<T: Real>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    dy: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    invstd: &[T],
    relu: bool,
    training: bool,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let (b, c, v) = channel_layout(x);
    let n = (b * v) as f64;
    let masked = |s: usize, ch: usize, i: usize| -> f64 {
        let idx = (s * c + ch) * v + i;
        if relu && y.data()[idx] <= T::zero() {
            0.0
        } else {
            dy.data()[idx].to_f64_lossy()
        }
    };
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (m, inv) = (mean[ch].to_f64_lossy(), invstd[ch].to_f64_lossy());
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for s in 0..b {
            for i in 0..v {
                let g = masked(s, ch, i);
                let xhat = (x.data()[(s * c + ch) * v + i].to_f64_lossy() - m) * inv;
                sum_dy += g;
                sum_dy_xhat += g * xhat;
            }
        }
        dgamma[ch] = T::from_f64_lossy(sum_dy_xhat);
        dbeta[ch] = T::from_f64_lossy(sum_dy);
        let g0 = gamma[ch].to_f64_lossy() * inv;
        for s in 0..b {
            for i in 0..v {
                let idx = (s * c + ch) * v + i;
                let g = masked(s, ch, i);
                let val = if training {
                    let xhat = (x.data()[idx].to_f64_lossy() - m) * inv;
                    g0 * (g - sum_dy / n - xhat * sum_dy_xhat / n)
                } else {
                    g0 * g
                };
                dx.data_mut()[idx] = T::from_f64_lossy(val);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Max pooling; padded positions never win. Returns the output and, per
/// output element, the flat index of the winner within its channel plane.
pub(crate) fn maxpool_forward<T: Real>(x: &Tensor<T>, geom: PoolGeometry) -> Option<(Tensor<T>, Vec<u32>)> {
    let (b, c, dims) = dims5(x);
    let out = geom.out_dims(dims)?;
    let [d, h, w] = dims;
    let plane = d * h * w;
    let ov: usize = out.iter().product();
    let mut y = Tensor::zeros(&[b, c, out[0], out[1], out[2]]);
    let mut argmax = vec![0u32; b * c * ov];
    let range = |o: usize, axis: usize, n: usize| {
        let start = (o * geom.stride[axis]) as isize - geom.padding[axis] as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + geom.kernel[axis] as isize).max(0) as usize).min(n);
        lo..hi
    };
    for sc in 0..b * c {
        let xs = &x.data()[sc * plane..(sc + 1) * plane];
        let mut o = sc * ov;
        for oz in 0..out[0] {
            let zr = range(oz, 0, d);
            for oy in 0..out[1] {
                let yr = range(oy, 1, h);
                for ox in 0..out[2] {
                    let xr = range(ox, 2, w);
                    // windows are never empty while padding < kernel
                    let mut best_idx = (zr.start * h + yr.start) * w + xr.start;
                    let mut best = xs[best_idx];
                    for iz in zr.clone() {
                        for iy in yr.clone() {
                            for ix in xr.clone() {
                                let idx = (iz * h + iy) * w + ix;
                                if xs[idx] > best {
                                    best = xs[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    y.data_mut()[o] = best;
                    argmax[o] = best_idx as u32;
                    o += 1;
                }
            }
        }
    }
    Some((y, argmax))
}

/// Routes each output gradient to its recorded winner. `per_plane` is the
/// number of output values per (sample, channel) pair.
pub(crate) fn scatter_argmax<T: Real>(
    input_shape: &[usize],
    dy: &Tensor<T>,
    argmax: &[u32],
    per_plane: usize,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let plane: usize = input_shape[2..].iter().product();
    for (o, (&g, &idx)) in dy.data().iter().zip(argmax).enumerate() {
        let sc = o / per_plane;
        let slot = &mut dx.data_mut()[sc * plane + idx as usize];
        *slot = *slot + g;
    }
    dx
}

/// Contiguous split of `len` into `bins` parts, earlier parts larger by at
/// most one. Returns the start offsets plus the final end.
pub(crate) fn bin_edges(len: usize, bins: usize) -> Vec<usize> {
    let (base, extra) = (len / bins, len % bins);
    let mut edges = Vec::with_capacity(bins + 1);
    let mut at = 0;
    edges.push(0);
    for i in 0..bins {
        at += base + usize::from(i < extra);
        edges.push(at);
    }
    edges
}

/// Spectral pyramid max pooling: for each level `k`, `k` spectral bins each
/// pooled over all spatial positions. Output `[B, C * sum(levels)]`, ordered
/// by level, then channel, then bin.
pub(crate) fn pyramid_forward<T: Real>(x: &Tensor<T>, levels: &[usize]) -> (Tensor<T>, Vec<u32>) {
    let (b, c, [d, h, w]) = dims5(x);
    let plane = d * h * w;
    let total: usize = levels.iter().sum();
    let mut y = Tensor::zeros(&[b, c * total]);
    let mut argmax = vec![0u32; b * c * total];
    let mut o = 0;
    for s in 0..b {
        for &k in levels {
            let edges = bin_edges(d, k);
            for ch in 0..c {
                let xs = &x.data()[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                for bin in 0..k {
                    let lo = edges[bin] * h * w;
                    let hi = edges[bin + 1] * h * w;
                    let mut best_idx = lo;
                    for i in lo..hi {
                        if xs[i] > xs[best_idx] {
                            best_idx = i;
                        }
                    }
                    y.data_mut()[o] = xs[best_idx];
                    argmax[o] = ((s * c + ch) * plane + best_idx) as u32;
                    o += 1;
                }
            }
        }
    }
    (y, argmax)
}

pub(crate) fn pyramid_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>, argmax: &[u32]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (&g, &idx) in dy.data().iter().zip(argmax) {
        let slot = &mut dx.data_mut()[idx as usize];
        *slot = *slot + g;
    }
    dx
}

/// `x: [B, F]`, `weight: [C, F]`, `bias: [C]`.
pub(crate) fn linear_forward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Tensor<T> {
    let (b, f) = (x.shape()[0], x.shape()[1]);
    let c = weight.shape()[0];
    let mut y = Tensor::zeros(&[b, c]);
    for row in y.data_mut().chunks_exact_mut(c) {
        row.copy_from_slice(bias);
    }
    gemm(
        false,
        true,
        b,
        c,
        f,
        T::one(),
        x.data(),
        weight.data(),
        T::one(),
        y.data_mut(),
    );
    y
}

pub(crate) fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let (b, f) = (x.shape()[0], x.shape()[1]);
    let c = weight.shape()[0];
    let mut dx = Tensor::zeros(x.shape());
    gemm(
        false,
        false,
        b,
        f,
        c,
        T::one(),
        dy.data(),
        weight.data(),
        T::zero(),
        dx.data_mut(),
    );
    let mut dw = Tensor::zeros(weight.shape());
    gemm(
        true,
        false,
        c,
        f,
        b,
        T::one(),
        dy.data(),
        x.data(),
        T::zero(),
        dw.data_mut(),
    );
    let mut db = vec![T::zero(); c];
    for row in dy.data().chunks_exact(c) {
        for (a, &g) in db.iter_mut().zip(row) {
            *a = *a + g;
        }
    }
    (dx, dw, db)
}

pub(crate) fn log_softmax_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.shape()[1];
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for v in row.iter_mut() {
            *v = *v - lse;
        }
    }
    y
}

pub(crate) fn log_softmax_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let c = y.shape()[1];
    let mut dx = dy.clone();
    for (row, yrow) in dx.data_mut().chunks_exact_mut(c).zip(y.data().chunks_exact(c)) {
        let total: T = row.iter().copied().sum();
        for (g, &lp) in row.iter_mut().zip(yrow) {
            *g = *g - lp.exp() * total;
        }
    }
    dx
}

/// Concatenates along the channel axis.
pub(crate) fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let b = parts[0].shape()[0];
    let spatial: usize = parts[0].shape()[2..].iter().product();
    let total_c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut shape = parts[0].shape().to_vec();
    shape[1] = total_c;
    let mut data = Vec::with_capacity(b * total_c * spatial);
    for s in 0..b {
        for p in parts {
            let c = p.shape()[1];
            data.extend_from_slice(&p.data()[s * c * spatial..(s + 1) * c * spatial]);
        }
    }
    Tensor::from_vec(&shape, data).expect("concat sizes")
}

pub(crate) fn split_channels<T: Real>(dy: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let b = dy.shape()[0];
    let total_c = dy.shape()[1];
    let spatial: usize = dy.shape()[2..].iter().product();
    let mut offset = 0;
    let mut out = Vec::with_capacity(channels.len());
    for &c in channels {
        let mut shape = dy.shape().to_vec();
        shape[1] = c;
        let mut data = Vec::with_capacity(b * c * spatial);
        for s in 0..b {
            let start = (s * total_c + offset) * spatial;
            data.extend_from_slice(&dy.data()[start..start + c * spatial]);
        }
        out.push(Tensor::from_vec(&shape, data).expect("split sizes"));
        offset += c;
    }
    out
}
