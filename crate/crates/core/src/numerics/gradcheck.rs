use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// Max relative error between the tape gradient of scalar `f` at `x` and
/// central differences with step `h`. Relative error is
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several inputs at once; every input is perturbed.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(Tape::new, f, inputs, h)
}

pub(crate) fn grad_check_with<F, T>(make_tape: T, f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    T: Fn() -> Tape,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = make_tape();
        let vars: Vec<Var> = vals.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let y = tape.value(out);
        if y.numel() != 1 {
            return Err(Error::dims("grad_check", "function must return a scalar"));
        }
        Ok(y.data()[0])
    };

    let mut tape = make_tape();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (slot, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[slot].dims()));
        for i in 0..inputs[slot].numel() {
            let orig = inputs[slot].data()[i];
            probe[slot].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[slot].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[slot].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("grad_check input {slot}[{i}]")));
            }
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
