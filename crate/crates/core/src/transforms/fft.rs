use super::complex::ComplexSequence;
use super::dft::root_of_unity;
use crate::error::{Error, Result};

/// Precomputed tables for an iterative radix-2 decimation-in-time FFT.
#[derive(Clone, Debug)]
pub struct FftPlan {
    len: usize,
    bitrev: Vec<u32>,
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::UnsupportedLength {
                op: "fft",
                len,
                hint: "radix-2 FFT needs a power of two; use the DFT-matrix path",
            });
        }
        let bits = len.trailing_zeros();
        let bitrev = (0..len as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();
        let half = len / 2;
        let (tw_re, tw_im) = (0..half).map(|j| root_of_unity(j, len)).unzip();
        Ok(FftPlan {
            len,
            bitrev,
            tw_re,
            tw_im,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place forward transform of one split-plane signal.
    pub fn process(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.len;
        debug_assert!(re.len() == n && im.len() == n);
        for i in 0..n {
            let j = self.bitrev[i] as usize;
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for j in 0..half {
                    let (wr, wi) = (self.tw_re[j * stride], self.tw_im[j * stride]);
                    let a = start + j;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            size *= 2;
        }
    }
}

impl FftPlan {
    /// Transforms along the leading axis of a `len × width` row-major block:
    /// every column is one signal, and butterflies run over whole rows.
    pub fn process_columns(&self, re: &mut [f64], im: &mut [f64], width: usize) {
        let n = self.len;
        debug_assert!(re.len() == n * width && im.len() == n * width);
        for i in 0..n {
            let j = self.bitrev[i] as usize;
            if j > i {
                let (lo, hi) = re.split_at_mut(j * width);
                lo[i * width..(i + 1) * width].swap_with_slice(&mut hi[..width]);
                let (lo, hi) = im.split_at_mut(j * width);
                lo[i * width..(i + 1) * width].swap_with_slice(&mut hi[..width]);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for j in 0..half {
                    let (wr, wi) = (self.tw_re[j * stride], self.tw_im[j * stride]);
                    let a = (start + j) * width;
                    let b = a + half * width;
                    let (re_a, re_b) = re[a..b + width].split_at_mut(b - a);
                    let (im_a, im_b) = im[a..b + width].split_at_mut(b - a);
                    let (re_a, im_a) = (&mut re_a[..width], &mut im_a[..width]);
                    for c in 0..width {
                        let tr = re_b[c] * wr - im_b[c] * wi;
                        let ti = re_b[c] * wi + im_b[c] * wr;
                        re_b[c] = re_a[c] - tr;
                        im_b[c] = im_a[c] - ti;
                        re_a[c] += tr;
                        im_a[c] += ti;
                    }
                }
            }
            size *= 2;
        }
    }
}

/// Unnormalized forward FFT for power-of-two lengths.
pub fn fft(x: &ComplexSequence) -> Result<ComplexSequence> {
    let plan = FftPlan::new(x.len())?;
    let mut out = x.clone();
    let (re, im) = out.parts_mut();
    plan.process(re, im);
    Ok(out)
}

/// FFT when the length allows it, otherwise the direct DFT.
pub fn dft_auto(x: &ComplexSequence) -> ComplexSequence {
    if x.len().is_power_of_two() {
        fft(x).expect("power of two")
    } else {
        super::dft::dft_naive(x)
    }
}
