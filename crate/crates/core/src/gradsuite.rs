//! Central-difference gradient checks over every tape primitive, every
//! encoder block kind and a two-layer model per mixing kind.

use rand::Rng as _;

use crate::error::Result;
use crate::model::{Bound, EncoderInput, MixingKind, Model, ModelConfig, ParamId, Variant};
use crate::numerics::gradcheck::grad_check_with;
use crate::numerics::{rng_from_seed, Mode, OpKind, Tape, Tensor, Var, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE};
use crate::transforms::{DftMethod, FourierMixer};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    /// `op:<name>`, `layer:<kind>` or `model:<kind>`.
    pub component: String,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRAD_CHECK_TOLERANCE
    }
}

fn random(dims: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::from_fn(dims, |_| rng.gen_range(-scale..scale))
}

/// `Σ y ⊙ w` for a fixed random `w`, so every output element matters.
fn weighted(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = random(tape.value(y).dims(), seed, 1.0);
    let c = tape.constant(w);
    let p = tape.mul(y, c)?;
    tape.sum(p)
}

type OpCase = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn op_cases() -> Vec<OpCase> {
    let r = random;
    vec![
        (
            "matmul",
            vec![r(&[3, 4], 1, 1.0), r(&[4, 5], 2, 1.0)],
            Box::new(|t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted(t, y, 100)
            }),
        ),
        (
            "matmul_bt",
            vec![r(&[3, 4], 3, 1.0), r(&[5, 4], 4, 1.0)],
            Box::new(|t, v| {
                let y = t.matmul_bt(v[0], v[1])?;
                weighted(t, y, 101)
            }),
        ),
        (
            "dense",
            vec![r(&[2, 3, 4], 5, 1.0), r(&[4, 5], 6, 1.0), r(&[5], 7, 1.0)],
            Box::new(|t, v| {
                let y = t.dense(v[0], v[1], Some(v[2]))?;
                weighted(t, y, 102)
            }),
        ),
        (
            "add",
            vec![r(&[3, 4], 8, 1.0), r(&[3, 4], 9, 1.0)],
            Box::new(|t, v| {
                let y = t.add(v[0], v[1])?;
                weighted(t, y, 103)
            }),
        ),
        (
            "add_bias",
            vec![r(&[3, 4], 10, 1.0), r(&[4], 11, 1.0)],
            Box::new(|t, v| {
                let y = t.add_bias(v[0], v[1])?;
                weighted(t, y, 104)
            }),
        ),
        (
            "mul",
            vec![r(&[3, 4], 12, 1.0), r(&[3, 4], 13, 1.0)],
            Box::new(|t, v| {
                let y = t.mul(v[0], v[1])?;
                t.sum(y)
            }),
        ),
        (
            "scale",
            vec![r(&[3, 4], 14, 1.0)],
            Box::new(|t, v| {
                let y = t.scale(v[0], -0.7)?;
                weighted(t, y, 105)
            }),
        ),
        (
            "sum",
            vec![r(&[3, 4], 15, 1.0)],
            Box::new(|t, v| {
                let y = t.sum(v[0])?;
                t.scale(y, 1.3)
            }),
        ),
        (
            "reshape",
            vec![r(&[3, 4], 16, 1.0)],
            Box::new(|t, v| {
                let y = t.reshape(v[0], &[2, 6])?;
                weighted(t, y, 106)
            }),
        ),
        (
            "layer_norm",
            vec![r(&[3, 6], 17, 2.0), r(&[6], 18, 1.0), r(&[6], 19, 1.0)],
            Box::new(|t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-12)?;
                weighted(t, y, 107)
            }),
        ),
        (
            "gelu",
            vec![r(&[3, 4], 20, 3.0)],
            Box::new(|t, v| {
                let y = t.gelu(v[0])?;
                weighted(t, y, 108)
            }),
        ),
        (
            "tanh",
            vec![r(&[3, 4], 21, 2.0)],
            Box::new(|t, v| {
                let y = t.tanh(v[0])?;
                weighted(t, y, 109)
            }),
        ),
        (
            "softmax",
            vec![r(&[2, 3, 4], 22, 2.0)],
            Box::new(|t, v| {
                let y = t.softmax(v[0], 1)?;
                weighted(t, y, 110)
            }),
        ),
        (
            "dropout",
            vec![r(&[4, 5], 23, 1.0)],
            Box::new(|t, v| {
                // same seed on every evaluation, so the mask is fixed
                let y = t.dropout(v[0], 0.3, Mode::Train, &mut rng_from_seed(9))?;
                weighted(t, y, 111)
            }),
        ),
        (
            "gather",
            vec![r(&[6, 4], 24, 1.0)],
            Box::new(|t, v| {
                let y = t.gather(v[0], &[0, 3, 3, 5])?;
                weighted(t, y, 112)
            }),
        ),
        (
            "select_rows",
            vec![r(&[5, 3], 25, 1.0)],
            Box::new(|t, v| {
                let y = t.select_rows(v[0], &[4, 0, 4])?;
                weighted(t, y, 113)
            }),
        ),
        (
            "block_map",
            vec![r(&[2, 4, 8], 26, 1.0)],
            Box::new(|t, v| {
                let m = FourierMixer::new(4, 8, DftMethod::Fft, false)?;
                let y = t.block_map(v[0], std::sync::Arc::new(m))?;
                weighted(t, y, 114)
            }),
        ),
        (
            "seq_mix",
            vec![r(&[4, 4], 27, 1.0), r(&[2, 4, 3], 28, 1.0)],
            Box::new(|t, v| {
                let y = t.seq_mix(v[0], v[1])?;
                weighted(t, y, 115)
            }),
        ),
        (
            "attention",
            vec![r(&[2, 4, 6], 29, 1.0), r(&[2, 4, 6], 30, 1.0), r(&[2, 4, 6], 31, 1.0)],
            Box::new(|t, v| {
                let a = t.attention(v[0], v[1], v[2], 2, 0.0, Mode::Eval, &mut rng_from_seed(0))?;
                let b = t.attention(v[0], v[1], v[2], 3, 0.2, Mode::Train, &mut rng_from_seed(4))?;
                let y = t.add(a, b)?;
                weighted(t, y, 116)
            }),
        ),
        (
            "cross_entropy",
            vec![r(&[3, 5], 32, 2.0)],
            Box::new(|t, v| t.cross_entropy(v[0], &[4, 0, 2])),
        ),
    ]
}

/// Re-draws every tensor uniformly so gradients are not vanishingly small.
fn roughen(model: &mut Model, seed: u64) {
    let ids: Vec<ParamId> = model.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        let dims = model.params().value(id).dims().to_vec();
        *model.params_mut().value_mut(id) = random(&dims, seed + id.index() as u64, 0.5);
    }
}

fn kind_config(kind: MixingKind, n: usize, d: usize, layers: usize) -> ModelConfig {
    let mut cfg = ModelConfig::small(n, d, layers, Variant::FnetFft);
    cfg.mixing_plan = vec![kind; layers];
    cfg.num_heads = 2;
    cfg.vocab_size = 12;
    cfg.ff_dim = d;
    cfg.dropout_rate = 0.0;
    cfg
}

fn layer_check(kind: MixingKind, make_tape: &dyn Fn() -> Tape) -> Result<f64> {
    let (n, d) = (4, 8);
    let mut model = Model::new(kind_config(kind, n, d, 1))?;
    roughen(&mut model, 3);
    let mut inputs: Vec<Tensor> = model.params().iter().map(|(_, p)| p.value.clone()).collect();
    inputs.push(random(&[1, n, d], 4, 1.0));
    grad_check_with(
        make_tape,
        |tape, vars| {
            let (params, x) = vars.split_at(vars.len() - 1);
            let b = Bound::from_vars(params.to_vec());
            let y = model.layer(tape, &b, 0, x[0], Mode::Eval, &mut rng_from_seed(0))?;
            weighted(tape, y, 5)
        },
        &inputs,
        GRAD_CHECK_STEP,
    )
}

fn model_check(kind: MixingKind, make_tape: &dyn Fn() -> Tape) -> Result<f64> {
    let (n, d) = (8, 16);
    let mut model = Model::new(kind_config(kind, n, d, 2))?;
    roughen(&mut model, 21);
    let input = EncoderInput::new((0..2 * n).map(|i| (3 * i + 1) % 12).collect(), vec![0; 2 * n], 2, n)?;
    let inputs: Vec<Tensor> = model.params().iter().map(|(_, p)| p.value.clone()).collect();
    grad_check_with(
        make_tape,
        |tape, vars| {
            let b = Bound::from_vars(vars.to_vec());
            let out = model.forward(tape, &b, &input, Mode::Eval, &mut rng_from_seed(0))?;
            let (mlm, nsp) = model.pretrain_heads(tape, &b, out, &[1, 5, 12])?;
            let a = tape.cross_entropy(mlm, &[3, 7, 0])?;
            let c = tape.cross_entropy(nsp, &[1, 0])?;
            tape.add(a, c)
        },
        &inputs,
        GRAD_CHECK_STEP,
    )
}

/// Runs every check. `corrupt` scales one primitive's backward rule, to show
/// the suite catches it. `progress` sees each result as it completes.
pub fn run_gradient_suite(corrupt: Option<OpKind>, mut progress: impl FnMut(&CheckResult)) -> Result<Vec<CheckResult>> {
    let make_tape = move || Tape::new().with_corrupted_backward(corrupt);
    let mut out = Vec::new();
    let mut push = |component: String, err: f64| {
        let r = CheckResult {
            component,
            max_rel_error: err,
        };
        progress(&r);
        out.push(r);
    };
    for (name, inputs, f) in op_cases() {
        let err = grad_check_with(make_tape, |t, v| f(t, v), &inputs, GRAD_CHECK_STEP)?;
        push(format!("op:{name}"), err);
    }
    for kind in MixingKind::ALL {
        push(format!("layer:{kind}"), layer_check(kind, &make_tape)?);
    }
    for kind in MixingKind::ALL {
        push(format!("model:{kind}"), model_check(kind, &make_tape)?);
    }
    Ok(out)
}
