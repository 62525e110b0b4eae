//! Forward/backward kernels shared by the eager functions and the tape.

use rand::Rng as _;

use super::rng::Rng;

/// Strided matrix view: `data[r * rs + c * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// The same buffer read as its transpose.
    pub fn t(self) -> Self {
        View {
            data: self.data,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn strided(data: &'a [f64], rs: usize, cs: usize) -> Self {
        View {
            data,
            rs: rs as isize,
            cs: cs as isize,
        }
    }
}

/// `out = beta * out + a (m×k) · b (k×n)`, `out` row-major with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, out: &mut [f64], ldc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for v in &mut out[i * ldc..i * ldc + n] {
                *v *= beta;
            }
        }
        return;
    }
    debug_assert!(out.len() >= (m - 1) * ldc + n);
    // SAFETY: the views and the output slice cover every index the strides reach;
    // callers pass extents taken from the owning tensors.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            out.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + fast_tanh(GELU_C * (x + GELU_A * x * x * x)))
}

/// `tanh` through a single `exp`; the absolute error stays near machine
/// epsilon, which is all GELU needs.
fn fast_tanh(u: f64) -> f64 {
    if u.abs() > 20.0 {
        return u.signum();
    }
    let e = (2.0 * u).exp();
    (e - 1.0) / (e + 1.0)
}

/// GELU value and the inner tanh, which the derivative reuses.
pub(crate) fn gelu_parts(x: f64) -> (f64, f64) {
    let t = fast_tanh(GELU_C * (x + GELU_A * x * x * x));
    (0.5 * x * (1.0 + t), t)
}

#[cfg(test)]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    gelu_grad_with(x, fast_tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub(crate) fn gelu_grad_with(x: f64, t: f64) -> f64 {
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Normalizes each row of width `d`; returns `(y, xhat, inv_std)`.
pub(crate) fn layer_norm_forward(
    x: &[f64],
    d: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(rows);
    for xs in x.chunks_exact(d) {
        let mean = xs.iter().sum::<f64>() / d as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let h = (xs[j] - mean) * is;
            xhat.push(h);
            y.push(h * gamma[j] + beta[j]);
        }
    }
    (y, xhat, inv_std)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward(
    g: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = g.len() / d;
    let mut dx = vec![0.0; g.len()];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let mut dh = vec![0.0; d];
    for r in 0..rows {
        let gs = &g[r * d..(r + 1) * d];
        let hs = &xhat[r * d..(r + 1) * d];
        let mut mean_dh = 0.0;
        let mut mean_dh_h = 0.0;
        for j in 0..d {
            dgamma[j] += gs[j] * hs[j];
            dbeta[j] += gs[j];
            dh[j] = gs[j] * gamma[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * hs[j];
        }
        mean_dh /= d as f64;
        mean_dh_h /= d as f64;
        for j in 0..d {
            dx[r * d + j] = inv_std[r] * (dh[j] - mean_dh - hs[j] * mean_dh_h);
        }
    }
    (dx, dgamma, dbeta)
}

/// Softmax along an axis described as `(outer, len, inner)` strides.
pub(crate) fn softmax_axis(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let idx = |k: usize| base + k * inner;
            let max = (0..len).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..len {
                let e = (x[idx(k)] - max).exp();
                y[idx(k)] = e;
                sum += e;
            }
            for k in 0..len {
                y[idx(k)] /= sum;
            }
        }
    }
    y
}

pub(crate) fn softmax_axis_backward(y: &[f64], g: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: f64 = (0..len).map(|k| y[base + k * inner] * g[base + k * inner]).sum();
            for k in 0..len {
                let at = base + k * inner;
                dx[at] = y[at] * (g[at] - dot);
            }
        }
    }
    dx
}

/// In-place row softmax over contiguous rows of width `d`.
pub(crate) fn softmax_rows_inplace(x: &mut [f64], d: usize) {
    for row in x.chunks_mut(d) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Inverted-dropout multipliers: `0` with probability `rate`, else `1/(1-rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}
