use std::f64::consts::PI;

use super::complex::ComplexSequence;
use crate::error::{Error, Result};

/// `e^{-2πi·(num/den)}`, with the ratio reduced modulo 1 first so large
/// index products keep full precision.
pub(crate) fn root_of_unity(num: usize, den: usize) -> (f64, f64) {
    let r = num % den;
    let (s, c) = (-2.0 * PI * r as f64 / den as f64).sin_cos();
    (c, s)
}

/// Unnormalized DFT by direct O(N²) summation.
pub fn dft_naive(x: &ComplexSequence) -> ComplexSequence {
    let n = x.len();
    let (xr, xi) = (x.re(), x.im());
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        let (mut sr, mut si) = (0.0, 0.0);
        for j in 0..n {
            let (c, s) = root_of_unity(j * k, n);
            sr += xr[j] * c - xi[j] * s;
            si += xr[j] * s + xi[j] * c;
        }
        re[k] = sr;
        im[k] = si;
    }
    ComplexSequence::new(re, im).expect("lengths match")
}

/// Cached unnormalized DFT (Vandermonde) matrix, `W[j][k] = e^{-2πi jk/N}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DftMatrix {
    size: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl DftMatrix {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Empty("dft matrix"));
        }
        let mut re = vec![0.0; size * size];
        let mut im = vec![0.0; size * size];
        for j in 0..size {
            for k in 0..size {
                let (c, s) = root_of_unity(j * k, size);
                re[j * size + k] = c;
                im[j * size + k] = s;
            }
        }
        Ok(DftMatrix { size, re, im })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entry(&self, j: usize, k: usize) -> (f64, f64) {
        (self.re[j * self.size + k], self.im[j * self.size + k])
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }
}

/// DFT as a matrix–vector product against a cached [`DftMatrix`].
pub fn dft_via_matrix(x: &ComplexSequence, w: &DftMatrix) -> Result<ComplexSequence> {
    let n = w.size();
    if x.len() != n {
        return Err(Error::dims(
            "dft_via_matrix",
            format!("sequence length {} vs matrix size {n}", x.len()),
        ));
    }
    let (xr, xi) = (x.re(), x.im());
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        let wr = &w.re[k * n..(k + 1) * n];
        let wi = &w.im[k * n..(k + 1) * n];
        let (mut sr, mut si) = (0.0, 0.0);
        for j in 0..n {
            sr += wr[j] * xr[j] - wi[j] * xi[j];
            si += wr[j] * xi[j] + wi[j] * xr[j];
        }
        re[k] = sr;
        im[k] = si;
    }
    ComplexSequence::new(re, im)
}
