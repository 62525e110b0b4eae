//! Dense `f64` tensors, reverse-mode autodiff and finite-difference checks.

pub(crate) mod gradcheck;
mod heap;
pub(crate) mod kernels;
pub mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE};
pub use heap::retain_freed_memory;
pub use rng::{child_rng, derive_seed, rng_from_seed, Rng};
pub use tape::{BlockLinear, Grads, Mode, OpKind, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use kernels::{gemm, View};

/// Matrix product of `a: m×k` and `b: k×p`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0] {
        return Err(Error::dims(
            "matmul",
            format!("cannot multiply {:?} by {:?}", a.dims(), b.dims()),
        ));
    }
    let (m, k, p) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    let mut out = vec![0.0; m * p];
    gemm(
        m,
        k,
        p,
        View::rows(a.data(), k),
        View::rows(b.data(), p),
        0.0,
        &mut out,
        p,
    );
    Tensor::new(vec![m, p], out)
}

/// Normalizes over the last axis, then applies `gamma`/`beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.last_dim();
    if x.rank() == 0 || d == 0 || gamma.dims() != [d] || beta.dims() != [d] {
        return Err(Error::dims(
            "layer_norm",
            format!("input {:?}, gamma {:?}, beta {:?}", x.dims(), gamma.dims(), beta.dims()),
        ));
    }
    let (y, _, _) = kernels::layer_norm_forward(x.data(), d, gamma.data(), beta.data(), eps);
    Tensor::new(x.dims().to_vec(), y)
}

/// Elementwise GELU, tanh form: `0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x³)))`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(kernels::gelu)
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = tape::axis_split(x.dims(), axis, "softmax")?;
    Tensor::new(x.dims().to_vec(), kernels::softmax_axis(x.data(), outer, len, inner))
}

/// Inverted dropout; identity in eval mode or at rate 0.
pub fn dropout(x: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
    tape::check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = kernels::dropout_mask(x.numel(), rate, rng);
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.dims().to_vec(), data)
}
