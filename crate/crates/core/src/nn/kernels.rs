//! Forward and backward kernels for the individual layer kinds.

use super::tensor::Tensor;

/// `c = a * b + beta * c` with row-major operands; `a` is `m x k` (or its
/// transpose when `ta`), `b` is `k x n` (or its transpose when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    ta: bool,
    b: &[f32],
    tb: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Output columns `[ox_lo, ox_hi)` whose input column `ox*stride + kx - pad`
    /// is in bounds.
    fn ox_range(&self, kx: usize, ow: usize) -> (usize, usize) {
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let (oh, ow) = self.out_hw();
        let plane = oh * ow;
        cols.fill(0.0);
        for c in 0..self.c {
            let xc = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    let (lo, hi) = self.ox_range(kx, ow);
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let d = &mut dst[oy * ow..(oy + 1) * ow];
                        for ox in lo..hi {
                            d[ox] = src[ox * self.stride + kx - self.pad];
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], gx: &mut [f32]) {
        let (oh, ow) = self.out_hw();
        let plane = oh * ow;
        for c in 0..self.c {
            let gc = &mut gx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    let (lo, hi) = self.ox_range(kx, ow);
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let d = &mut gc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let s = &src[oy * ow..(oy + 1) * ow];
                        for ox in lo..hi {
                            d[ox * self.stride + kx - self.pad] += s[ox];
                        }
                    }
                }
            }
        }
    }
}

/// `x: [N, C, H, W]`, `weight: [F, C, K, K]`, `bias: [F]` -> `[N, F, OH, OW]`.
pub(crate) fn conv_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, g: ConvGeom) -> Tensor {
    let n = x.shape()[0];
    let f = weight.shape()[0];
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    let ckk = g.c * g.k * g.k;
    let mut out = Tensor::zeros(&[n, f, oh, ow]);
    let mut cols = vec![0.0f32; ckk * plane];
    let in_stride = g.c * g.h * g.w;
    for i in 0..n {
        g.im2col(&x.data()[i * in_stride..(i + 1) * in_stride], &mut cols);
        let o = &mut out.data_mut()[i * f * plane..(i + 1) * f * plane];
        for (fi, chunk) in o.chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[fi]);
        }
        gemm(f, ckk, plane, weight.data(), false, &cols, false, 1.0, o);
    }
    out
}

/// Gradients with respect to input, weight and bias.
pub(crate) fn conv_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    g: ConvGeom,
) -> (Tensor, Tensor, Tensor) {
    let n = x.shape()[0];
    let f = weight.shape()[0];
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    let ckk = g.c * g.k * g.k;
    let in_stride = g.c * g.h * g.w;
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[f]);
    let mut cols = vec![0.0f32; ckk * plane];
    let mut gcols = vec![0.0f32; ckk * plane];
    for i in 0..n {
        let go = &grad_out.data()[i * f * plane..(i + 1) * f * plane];
        for (fi, chunk) in go.chunks(plane).enumerate() {
            gb.data_mut()[fi] += chunk.iter().sum::<f32>();
        }
        g.im2col(&x.data()[i * in_stride..(i + 1) * in_stride], &mut cols);
        // gw += go [F, P] * cols^T [P, CKK]
        gemm(f, plane, ckk, go, false, &cols, true, 1.0, gw.data_mut());
        // gcols = weight^T [CKK, F] * go [F, P]
        gemm(ckk, f, plane, weight.data(), true, go, false, 0.0, &mut gcols);
        g.col2im(&gcols, &mut gx.data_mut()[i * in_stride..(i + 1) * in_stride]);
    }
    (gx, gw, gb)
}

/// `x: [N, I]`, `weight: [U, I]`, `bias: [U]` -> `[N, U]`.
pub(crate) fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let n = x.shape()[0];
    let (u, i) = (weight.shape()[0], weight.shape()[1]);
    let mut out = Tensor::zeros(&[n, u]);
    for row in out.data_mut().chunks_mut(u) {
        row.copy_from_slice(bias.data());
    }
    gemm(n, i, u, x.data(), false, weight.data(), true, 1.0, out.data_mut());
    out
}

pub(crate) fn dense_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let n = x.shape()[0];
    let (u, i) = (weight.shape()[0], weight.shape()[1]);
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[u]);
    gemm(n, u, i, grad_out.data(), false, weight.data(), false, 0.0, gx.data_mut());
    gemm(u, n, i, grad_out.data(), true, x.data(), false, 0.0, gw.data_mut());
    for row in grad_out.data().chunks(u) {
        for (b, g) in gb.data_mut().iter_mut().zip(row) {
            *b += g;
        }
    }
    (gx, gw, gb)
}

/// Per-channel statistics and normalized values kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BnCache {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
    pub batch_mean: Vec<f32>,
    pub batch_var: Vec<f32>,
    pub batch_stats: bool,
}

fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let spatial = shape[2..].iter().product::<usize>();
    (n, c, spatial)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    eps: f32,
    batch_stats: bool,
) -> (Tensor, BnCache) {
    let (n, c, s) = channel_layout(x.shape());
    let m = (n * s) as f64;
    let xd = x.data();
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    if batch_stats {
        for ch in 0..c {
            let (mut sum, mut sq) = (0.0f64, 0.0f64);
            for i in 0..n {
                for &v in &xd[(i * c + ch) * s..(i * c + ch + 1) * s] {
                    sum += v as f64;
                }
            }
            let mu = sum / m;
            for i in 0..n {
                for &v in &xd[(i * c + ch) * s..(i * c + ch + 1) * s] {
                    let d = v as f64 - mu;
                    sq += d * d;
                }
            }
            mean[ch] = mu as f32;
            var[ch] = (sq / m) as f32;
        }
    } else {
        mean.copy_from_slice(running_mean.data());
        var.copy_from_slice(running_var.data());
    }
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0f32; xd.len()];
    let mut out = Tensor::zeros(x.shape());
    let od = out.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let range = (i * c + ch) * s..(i * c + ch + 1) * s;
            let (g, b, mu, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for j in range {
                let h = (xd[j] - mu) * is;
                xhat[j] = h;
                od[j] = g * h + b;
            }
        }
    }
    (
        out,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            batch_stats,
        },
    )
}

pub(crate) fn batchnorm_backward(
    grad_out: &Tensor,
    gamma: &Tensor,
    cache: &BnCache,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, s) = channel_layout(grad_out.shape());
    let m = (n * s) as f32;
    let go = grad_out.data();
    let mut gx = Tensor::zeros(grad_out.shape());
    let mut gg = Tensor::zeros(&[c]);
    let mut gbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
        for i in 0..n {
            for j in (i * c + ch) * s..(i * c + ch + 1) * s {
                sum_dy += go[j] as f64;
                sum_dy_xhat += (go[j] * cache.xhat[j]) as f64;
            }
        }
        gg.data_mut()[ch] = sum_dy_xhat as f32;
        gbeta.data_mut()[ch] = sum_dy as f32;
        let g = gamma.data()[ch];
        let is = cache.inv_std[ch];
        let gxd = gx.data_mut();
        if cache.batch_stats {
            let k = g * is / m;
            let (sd, sdx) = (sum_dy as f32, sum_dy_xhat as f32);
            for i in 0..n {
                for j in (i * c + ch) * s..(i * c + ch + 1) * s {
                    gxd[j] = k * (m * go[j] - sd - cache.xhat[j] * sdx);
                }
            }
        } else {
            for i in 0..n {
                for j in (i * c + ch) * s..(i * c + ch + 1) * s {
                    gxd[j] = go[j] * g * is;
                }
            }
        }
    }
    (gx, gg, gbeta)
}

/// Mean over channels: `[N, C, H, W]` -> `[N, 1, H, W]`.
pub(crate) fn channel_mean_forward(x: &Tensor) -> Tensor {
    let (n, c, s) = channel_layout(x.shape());
    let mut shape = x.shape().to_vec();
    shape[1] = 1;
    let mut out = Tensor::zeros(&shape);
    let inv = 1.0 / c as f32;
    for i in 0..n {
        let o = &mut out.data_mut()[i * s..(i + 1) * s];
        for ch in 0..c {
            for (acc, v) in o.iter_mut().zip(&x.data()[(i * c + ch) * s..(i * c + ch + 1) * s]) {
                *acc += v;
            }
        }
        o.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

pub(crate) fn channel_mean_backward(grad_out: &Tensor, input_shape: &[usize]) -> Tensor {
    let (n, c, s) = channel_layout(input_shape);
    let inv = 1.0 / c as f32;
    let mut gx = Tensor::zeros(input_shape);
    for i in 0..n {
        let go = &grad_out.data()[i * s..(i + 1) * s];
        for ch in 0..c {
            for (g, v) in gx.data_mut()[(i * c + ch) * s..(i * c + ch + 1) * s]
                .iter_mut()
                .zip(go)
            {
                *g = v * inv;
            }
        }
    }
    gx
}
