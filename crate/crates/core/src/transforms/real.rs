//! Real-to-real alternatives to the Fourier transform.

use std::f64::consts::PI;

use super::complex::ComplexSequence;
use super::fft::dft_auto;
use crate::error::{Error, Result};

/// Unnormalized fast Walsh–Hadamard transform (Sylvester ordering).
pub fn hadamard(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() || !x.len().is_power_of_two() {
        return Err(Error::UnsupportedLength {
            op: "hadamard",
            len: x.len(),
            hint: "Walsh–Hadamard transform needs a power-of-two length",
        });
    }
    let mut y = x.to_vec();
    let mut half = 1;
    while half < y.len() {
        for block in y.chunks_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*a, *b);
                *a = u + v;
                *b = u - v;
            }
        }
        half *= 2;
    }
    Ok(y)
}

/// Discrete Hartley transform, `Re(F x) - Im(F x)`.
pub fn hartley(x: &[f64]) -> Result<Vec<f64>> {
    let spectrum = dft_auto(&ComplexSequence::from_real(x)?);
    Ok(spectrum.re().iter().zip(spectrum.im()).map(|(r, i)| r - i).collect())
}

fn dct_scale(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// Orthonormal DCT-II, computed from the DFT of the even extension of `x`.
pub fn dct2(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Empty("dct2 input"));
    }
    let mirrored: Vec<f64> = x.iter().chain(x.iter().rev()).copied().collect();
    let spectrum = dft_auto(&ComplexSequence::from_real(&mirrored)?);
    Ok((0..n)
        .map(|k| {
            let (s, c) = (-PI * k as f64 / (2 * n) as f64).sin_cos();
            let real = c * spectrum.re()[k] - s * spectrum.im()[k];
            0.5 * real * dct_scale(k, n)
        })
        .collect())
}

/// Transpose (and inverse) of [`dct2`]: the orthonormal DCT-III.
pub fn dct2_transpose(y: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Empty("dct2_transpose input"));
    }
    Ok((0..n)
        .map(|j| {
            (0..n)
                .map(|k| {
                    let angle = PI * ((2 * j + 1) * k % (4 * n)) as f64 / (2 * n) as f64;
                    dct_scale(k, n) * angle.cos() * y[k]
                })
                .sum()
        })
        .collect())
}

/// Matrix of a 1D linear transform, column `j` = `transform(e_j)`.
pub(crate) fn transform_matrix(n: usize, transform: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut m = vec![0.0; n * n];
    let mut basis = vec![0.0; n];
    for j in 0..n {
        basis[j] = 1.0;
        let col = transform(&basis)?;
        basis[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            m[i * n + j] = v;
        }
    }
    Ok(m)
}
