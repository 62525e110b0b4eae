//! Eager mixing sublayers on single `n×d_h` blocks.

use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, Mode, Tape, Tensor};
use crate::transforms::{fourier_mix_2d, DftMethod};

/// Q, K, V and output projections, each a `d_h×d_h` kernel and a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub query: (Tensor, Tensor),
    pub key: (Tensor, Tensor),
    pub value: (Tensor, Tensor),
    pub output: (Tensor, Tensor),
}

fn check_block(x: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if x.rank() != 2 || x.numel() == 0 {
        return Err(Error::dims(op, format!("expected n×d_h, got {:?}", x.dims())));
    }
    Ok((x.dims()[0], x.dims()[1]))
}

/// Parameter-free Fourier mixing.
pub fn mix_fourier(x: &Tensor, method: DftMethod) -> Result<Tensor> {
    fourier_mix_2d(x, method)
}

/// Multi-head self-attention without dropout.
pub fn mix_attention(x: &Tensor, p: &AttentionParams, heads: usize) -> Result<Tensor> {
    let (n, d) = check_block(x, "mix_attention")?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone().reshape(&[1, n, d])?);
    let proj = |tape: &mut Tape, input, (k, b): &(Tensor, Tensor)| {
        let k = tape.constant(k.clone());
        let b = tape.constant(b.clone());
        tape.dense(input, k, Some(b))
    };
    let q = proj(&mut tape, xv, &p.query)?;
    let k = proj(&mut tape, xv, &p.key)?;
    let v = proj(&mut tape, xv, &p.value)?;
    let a = tape.attention(q, k, v, heads, 0.0, Mode::Eval, &mut rng_from_seed(0))?;
    let y = proj(&mut tape, a, &p.output)?;
    tape.value(y).clone().reshape(&[n, d])
}

/// `W_seq · x · W_hidᵀ`, no bias.
pub fn mix_linear(x: &Tensor, w_seq: &Tensor, w_hid: &Tensor) -> Result<Tensor> {
    let (n, d) = check_block(x, "mix_linear")?;
    if w_seq.dims() != [n, n] || w_hid.dims() != [d, d] {
        return Err(Error::dims(
            "mix_linear",
            format!("x {:?}, W_seq {:?}, W_hid {:?}", x.dims(), w_seq.dims(), w_hid.dims()),
        ));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone().reshape(&[1, n, d])?);
    let k = tape.constant(w_hid.transpose2()?);
    let w = tape.constant(w_seq.clone());
    let h = tape.dense(xv, k, None)?;
    let y = tape.seq_mix(w, h)?;
    tape.value(y).clone().reshape(&[n, d])
}

/// Same map as [`mix_linear`]; the matrices are frozen by the caller.
pub fn mix_random(x: &Tensor, r_seq: &Tensor, r_hid: &Tensor) -> Result<Tensor> {
    mix_linear(x, r_seq, r_hid)
}
