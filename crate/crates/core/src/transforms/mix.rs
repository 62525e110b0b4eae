//! Token mixing over `(sequence, hidden)` blocks.
//!
//! The Fourier mixers apply a 1D DFT along the hidden axis and along the
//! sequence axis, keep the complex intermediate, and extract the real plane
//! once at the end.

use crate::error::{Error, Result};
use crate::numerics::kernels::{gemm, View};
use crate::numerics::{BlockLinear, Tensor};

use super::complex::ComplexGrid;
use super::dft::DftMatrix;
use super::fft::FftPlan;
use super::real::{dct2, hadamard, hartley, transform_matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DftMethod {
    Fft,
    Matrix,
}

impl DftMethod {
    pub fn name(self) -> &'static str {
        match self {
            DftMethod::Fft => "fft",
            DftMethod::Matrix => "matrix",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisOrder {
    HiddenFirst,
    SequenceFirst,
}

/// One axis' DFT engine.
#[derive(Clone, Debug)]
enum AxisDft {
    Fft(FftPlan),
    Matrix(DftMatrix),
}

impl AxisDft {
    fn new(len: usize, method: DftMethod) -> Result<Self> {
        Ok(match method {
            DftMethod::Fft => AxisDft::Fft(FftPlan::new(len)?),
            DftMethod::Matrix => AxisDft::Matrix(DftMatrix::new(len)?),
        })
    }

    /// Transforms every contiguous row of width `cols` in place.
    fn rows(&self, re: &mut [f64], im: &mut [f64], cols: usize, threads: usize) {
        match self {
            AxisDft::Fft(plan) => for_row_chunks(re, im, cols, threads, |r, i| {
                for (rr, ii) in r.chunks_mut(cols).zip(i.chunks_mut(cols)) {
                    plan.process(rr, ii);
                }
            }),
            AxisDft::Matrix(w) => {
                let rows = re.len() / cols;
                let mut out_re = vec![0.0; re.len()];
                let mut out_im = vec![0.0; im.len()];
                let mut cross = vec![0.0; re.len()];
                let (wr, wi) = (View::rows(w.re(), cols), View::rows(w.im(), cols));
                gemm(rows, cols, cols, View::rows(re, cols), wr, 0.0, &mut out_re, cols);
                gemm(rows, cols, cols, View::rows(im, cols), wi, 0.0, &mut cross, cols);
                gemm(rows, cols, cols, View::rows(re, cols), wi, 0.0, &mut out_im, cols);
                gemm(rows, cols, cols, View::rows(im, cols), wr, 1.0, &mut out_im, cols);
                for ((dst, a), b) in re.iter_mut().zip(&out_re).zip(&cross) {
                    *dst = a - b;
                }
                im.copy_from_slice(&out_im);
            }
        }
    }
}

impl AxisDft {
    /// Transforms every column of a `len × width` row-major block in place.
    fn columns(&self, re: &mut [f64], im: &mut [f64], width: usize) {
        match self {
            AxisDft::Fft(plan) => plan.process_columns(re, im, width),
            AxisDft::Matrix(w) => {
                let n = w.size();
                let mut out_re = vec![0.0; re.len()];
                let mut out_im = vec![0.0; im.len()];
                let (wr, wi) = (View::rows(w.re(), n), View::rows(w.im(), n));
                let (xr, xi) = (View::rows(re, width), View::rows(im, width));
                gemm(n, n, width, wr, xr, 0.0, &mut out_re, width);
                gemm(n, n, width, wi, xi, 0.0, &mut out_im, width);
                for (a, b) in out_re.iter_mut().zip(out_im.iter_mut()) {
                    *a -= *b;
                }
                gemm(n, n, width, wr, xi, 0.0, &mut out_im, width);
                gemm(n, n, width, wi, xr, 1.0, &mut out_im, width);
                re.copy_from_slice(&out_re);
                im.copy_from_slice(&out_im);
            }
        }
    }
}

/// Runs `f` over disjoint row chunks, on up to `threads` scoped threads.
/// Rows are independent, so the result does not depend on the split.
fn for_row_chunks<F>(re: &mut [f64], im: &mut [f64], cols: usize, threads: usize, f: F)
where
    F: Fn(&mut [f64], &mut [f64]) + Sync,
{
    let rows = re.len() / cols;
    if threads <= 1 || rows < 2 {
        f(re, im);
        return;
    }
    let per = rows.div_ceil(threads) * cols;
    std::thread::scope(|s| {
        for (r, i) in re.chunks_mut(per).zip(im.chunks_mut(per)) {
            let f = &f;
            s.spawn(move || f(r, i));
        }
    });
}

fn transposed(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(src.len());
    for c in 0..cols {
        out.extend((0..rows).map(|r| src[r * cols + c]));
    }
    out
}

fn check_2d(x: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if x.rank() != 2 || x.numel() == 0 {
        return Err(Error::dims(
            op,
            format!("expected a non-empty n×d_h tensor, got {:?}", x.dims()),
        ));
    }
    Ok((x.dims()[0], x.dims()[1]))
}

fn columns(grid: &mut ComplexGrid, engine: &AxisDft) {
    let cols = grid.cols();
    let (re, im) = grid.planes_mut();
    engine.columns(re, im, cols);
}

/// Complex 2D DFT of a real `n×d_h` input, axes applied in `order`.
pub fn fourier_transform_2d(x: &Tensor, method: DftMethod, order: AxisOrder) -> Result<ComplexGrid> {
    let (n, d) = check_2d(x, "fourier_mix_2d")?;
    let seq = AxisDft::new(n, method)?;
    let hid = AxisDft::new(d, method)?;
    let mut grid = ComplexGrid::from_real(n, d, x.data())?;
    let hidden = |g: &mut ComplexGrid| {
        let (re, im) = g.planes_mut();
        hid.rows(re, im, d, 1);
    };
    match order {
        AxisOrder::HiddenFirst => {
            hidden(&mut grid);
            columns(&mut grid, &seq);
        }
        AxisOrder::SequenceFirst => {
            columns(&mut grid, &seq);
            hidden(&mut grid);
        }
    }
    Ok(grid)
}

/// `Re(F_seq(F_h(x)))` for a real `n×d_h` input.
pub fn fourier_mix_2d(x: &Tensor, method: DftMethod) -> Result<Tensor> {
    let (n, d) = check_2d(x, "fourier_mix_2d")?;
    let grid = fourier_transform_2d(x, method, AxisOrder::HiddenFirst)?;
    Tensor::new(vec![n, d], grid.into_real())
}

/// `Re(F_seq(x))`: DFT along the token axis only.
pub fn fourier_mix_1d_seq(x: &Tensor, method: DftMethod) -> Result<Tensor> {
    let (n, d) = check_2d(x, "fourier_mix_1d_seq")?;
    let seq = AxisDft::new(n, method)?;
    let mut grid = ComplexGrid::from_real(n, d, x.data())?;
    columns(&mut grid, &seq);
    Tensor::new(vec![n, d], grid.into_real())
}

/// Parameter-free Fourier mixing of `n×d_h` blocks, as a tape primitive.
#[derive(Debug)]
pub struct FourierMixer {
    n: usize,
    d: usize,
    seq: AxisDft,
    hid: Option<AxisDft>,
    threads: usize,
}

impl FourierMixer {
    /// Full 2D mixing (`seq_only = false`) or token-axis-only mixing.
    pub fn new(n: usize, d: usize, method: DftMethod, seq_only: bool) -> Result<Self> {
        Ok(FourierMixer {
            n,
            d,
            seq: AxisDft::new(n, method)?,
            hid: if seq_only { None } else { Some(AxisDft::new(d, method)?) },
            threads: 1,
        })
    }

    /// Splits the per-axis row transforms over `threads` workers.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    fn mix(&self, x: &[f64], out: &mut [f64]) {
        let (n, d) = (self.n, self.d);
        let mut im = vec![0.0; x.len()];
        let mut re = match &self.hid {
            Some(hid) if self.threads > 1 => {
                let mut re = x.to_vec();
                hid.rows(&mut re, &mut im, d, self.threads);
                re
            }
            // Serially it is faster to run the hidden axis as columns of the
            // transposed block.
            Some(hid) => {
                let mut tre = transposed(x, n, d);
                hid.columns(&mut tre, &mut im, n);
                im = transposed(&im, d, n);
                transposed(&tre, d, n)
            }
            None => x.to_vec(),
        };
        self.seq.columns(&mut re, &mut im, d);
        debug_assert_eq!(re.len(), n * d);
        out.copy_from_slice(&re);
    }
}

impl BlockLinear for FourierMixer {
    fn name(&self) -> &'static str {
        if self.hid.is_some() {
            "fourier_mix_2d"
        } else {
            "fourier_mix_1d_seq"
        }
    }

    fn block_dims(&self) -> (usize, usize) {
        (self.n, self.d)
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.mix(x, out);
    }

    // The DFT matrices are symmetric, so the real part of the 2D transform is
    // self-adjoint on real inputs.
    fn apply_adjoint(&self, g: &[f64], out: &mut [f64]) {
        self.mix(g, out);
    }
}

/// Real separable mixing `y = A_seq · x · A_hidᵀ` with fixed matrices.
#[derive(Debug)]
pub struct SeparableMixer {
    name: &'static str,
    n: usize,
    d: usize,
    seq: Vec<f64>,
    hid: Vec<f64>,
}

impl SeparableMixer {
    pub fn new(name: &'static str, seq: &Tensor, hid: &Tensor) -> Result<Self> {
        let n = seq.dims().first().copied().unwrap_or(0);
        let d = hid.dims().first().copied().unwrap_or(0);
        if seq.dims() != [n, n] || hid.dims() != [d, d] || n == 0 || d == 0 {
            return Err(Error::dims(name, format!("seq {:?}, hid {:?}", seq.dims(), hid.dims())));
        }
        Ok(SeparableMixer {
            name,
            n,
            d,
            seq: seq.data().to_vec(),
            hid: hid.data().to_vec(),
        })
    }

    fn from_transform(name: &'static str, n: usize, d: usize, t: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let seq = Tensor::new(vec![n, n], transform_matrix(n, &t)?)?;
        let hid = Tensor::new(vec![d, d], transform_matrix(d, &t)?)?;
        SeparableMixer::new(name, &seq, &hid)
    }

    /// Hartley transform along both axes.
    pub fn hartley(n: usize, d: usize) -> Result<Self> {
        SeparableMixer::from_transform("hartley_mix_2d", n, d, hartley)
    }

    /// Walsh–Hadamard transform along both axes.
    pub fn hadamard(n: usize, d: usize) -> Result<Self> {
        SeparableMixer::from_transform("hadamard_mix_2d", n, d, hadamard)
    }

    /// Orthonormal DCT-II along both axes.
    pub fn dct(n: usize, d: usize) -> Result<Self> {
        SeparableMixer::from_transform("dct_mix_2d", n, d, dct2)
    }

    fn product(&self, x: &[f64], out: &mut [f64], adjoint: bool) {
        let (n, d) = (self.n, self.d);
        let a = View::rows(&self.seq, n);
        let b = View::rows(&self.hid, d);
        let (a, b) = if adjoint { (a.t(), b) } else { (a, b.t()) };
        let mut tmp = vec![0.0; n * d];
        gemm(n, d, d, View::rows(x, d), b, 0.0, &mut tmp, d);
        gemm(n, n, d, a, View::rows(&tmp, d), 0.0, out, d);
    }
}

impl BlockLinear for SeparableMixer {
    fn name(&self) -> &'static str {
        self.name
    }

    fn block_dims(&self) -> (usize, usize) {
        (self.n, self.d)
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.product(x, out, false);
    }

    fn apply_adjoint(&self, g: &[f64], out: &mut [f64]) {
        self.product(g, out, true);
    }
}
