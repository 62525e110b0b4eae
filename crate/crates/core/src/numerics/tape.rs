//! Reverse-mode autodiff over a linear tape of recorded primitives.

use std::fmt;
use std::sync::Arc;

use super::kernels::{self, gemm, View};
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A fixed linear map applied independently to every trailing `rows × cols`
/// block of a tensor. The backward pass needs only the adjoint.
pub trait BlockLinear: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn block_dims(&self) -> (usize, usize);
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_adjoint(&self, g: &[f64], out: &mut [f64]);
}

/// Primitive kinds, used for diagnostics and fault injection in the gradient suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulBt,
    Dense,
    Add,
    AddBias,
    Mul,
    Scale,
    Sum,
    Reshape,
    LayerNorm,
    Gelu,
    Tanh,
    Softmax,
    Dropout,
    Gather,
    SelectRows,
    BlockMap,
    SeqMix,
    Attention,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::MatMulBt,
        OpKind::Dense,
        OpKind::Add,
        OpKind::AddBias,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Sum,
        OpKind::Reshape,
        OpKind::LayerNorm,
        OpKind::Gelu,
        OpKind::Tanh,
        OpKind::Softmax,
        OpKind::Dropout,
        OpKind::Gather,
        OpKind::SelectRows,
        OpKind::BlockMap,
        OpKind::SeqMix,
        OpKind::Attention,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::MatMulBt => "matmul_bt",
            OpKind::Dense => "dense",
            OpKind::Add => "add",
            OpKind::AddBias => "add_bias",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::Reshape => "reshape",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Gelu => "gelu",
            OpKind::Tanh => "tanh",
            OpKind::Softmax => "softmax",
            OpKind::Dropout => "dropout",
            OpKind::Gather => "gather",
            OpKind::SelectRows => "select_rows",
            OpKind::BlockMap => "block_map",
            OpKind::SeqMix => "seq_mix",
            OpKind::Attention => "attention",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu {
        x: Var,
        tanh: Vec<f64>,
    },
    Tanh(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    BlockMap {
        x: Var,
        map: Arc<dyn BlockLinear>,
    },
    SeqMix {
        w: Var,
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
        mask: Option<Vec<f64>>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulBt(..) => OpKind::MatMulBt,
            Op::Dense { .. } => OpKind::Dense,
            Op::Add(..) => OpKind::Add,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(..) => OpKind::Sum,
            Op::Reshape(..) => OpKind::Reshape,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gelu { .. } => OpKind::Gelu,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Gather { .. } => OpKind::Gather,
            Op::SelectRows { .. } => OpKind::SelectRows,
            Op::BlockMap { .. } => OpKind::BlockMap,
            Op::SeqMix { .. } => OpKind::SeqMix,
            Op::Attention { .. } => OpKind::Attention,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.slots.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.slots.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    trap_non_finite: bool,
    corrupt: Option<OpKind>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fail any op whose output contains NaN or infinity.
    pub fn with_nan_trap(mut self, on: bool) -> Self {
        self.trap_non_finite = on;
        self
    }

    /// Test hook: perturbs the backward rule of `kind` so the gradient suite
    /// can demonstrate that it catches a broken rule.
    pub fn with_corrupted_backward(mut self, kind: Option<OpKind>) -> Self {
        self.corrupt = kind;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn dims(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.dims()
    }

    /// Parents of a node, in recording order. Every parent index is smaller
    /// than the node's own index.
    pub fn parents(&self, var: Var) -> Vec<Var> {
        parents_of(&self.nodes[var.0].op)
    }

    pub fn kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.trap_non_finite {
            value.check_finite(op.kind().name())?;
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => {
                let parents = parents_of(&op);
                parents.iter().any(|p| self.nodes[p.0].requires_grad)
            }
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ` for `a: m×k`, `b: p×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.dims()[1] != bv.dims()[1] {
            return Err(Error::dims("matmul_bt", format!("{:?} · {:?}ᵀ", av.dims(), bv.dims())));
        }
        let (m, k, p) = (av.dims()[0], av.dims()[1], bv.dims()[0]);
        let mut out = vec![0.0; m * p];
        gemm(
            m,
            k,
            p,
            View::rows(av.data(), k),
            View::rows(bv.data(), k).t(),
            0.0,
            &mut out,
            p,
        );
        let out = Tensor::new(vec![m, p], out)?;
        self.push(out, Op::MatMulBt(a, b))
    }

    /// Affine map over the last axis: `x[..., k] · w[k, p] (+ b[p])`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.last_dim() != wv.dims()[0] || xv.rank() == 0 {
            return Err(Error::dims(
                "dense",
                format!("input {:?}, kernel {:?}", xv.dims(), wv.dims()),
            ));
        }
        let (k, p) = (wv.dims()[0], wv.dims()[1]);
        let rows = xv.numel() / k;
        let mut out = vec![0.0; rows * p];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.dims() != [p] {
                return Err(Error::dims("dense", format!("bias {:?} for width {p}", bv.dims())));
            }
            for row in out.chunks_mut(p) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            rows,
            k,
            p,
            View::rows(xv.data(), k),
            View::rows(wv.data(), p),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut out,
            p,
        );
        let mut dims = xv.dims().to_vec();
        *dims.last_mut().unwrap() = p;
        let out = Tensor::new(dims, out)?;
        self.push(out, Op::Dense { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(Error::dims("add", format!("{:?} + {:?}", av.dims(), bv.dims())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.dims().to_vec(), data)?;
        self.push(out, Op::Add(a, b))
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = xv.last_dim();
        if bv.dims() != [d] {
            return Err(Error::dims("add_bias", format!("{:?} + {:?}", xv.dims(), bv.dims())));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(xv.dims().to_vec(), data)?;
        self.push(out, Op::AddBias(x, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(Error::dims("mul", format!("{:?} * {:?}", av.dims(), bv.dims())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.dims().to_vec(), data)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(dims)?;
        self.push(out, Op::Reshape(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.last_dim();
        if d == 0 || gv.dims() != [d] || bv.dims() != [d] {
            return Err(Error::dims(
                "layer_norm",
                format!("input {:?}, gamma {:?}, beta {:?}", xv.dims(), gv.dims(), bv.dims()),
            ));
        }
        let (y, xhat, inv_std) = kernels::layer_norm_forward(xv.data(), d, gv.data(), bv.data(), eps);
        let out = Tensor::new(xv.dims().to_vec(), y)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (y, tanh): (Vec<f64>, Vec<f64>) = xv.data().iter().map(|&v| kernels::gelu_parts(v)).unzip();
        let out = Tensor::new(xv.dims().to_vec(), y)?;
        self.push(out, Op::Gelu { x, tanh })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.dims(), axis, "softmax")?;
        let y = kernels::softmax_axis(xv.data(), outer, len, inner);
        let out = Tensor::new(xv.dims().to_vec(), y)?;
        self.push(out, Op::Softmax { x, outer, len, inner })
    }

    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Var> {
        check_rate(rate)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let mask = kernels::dropout_mask(xv.numel(), rate, rng);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.dims().to_vec(), data)?;
        self.push(out, Op::Dropout { x, mask })
    }

    /// Row lookup: `table[V×d]` indexed by `ids`, giving `[ids.len()×d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::dims("gather", format!("table {:?}", tv.dims())));
        }
        let (v, d) = (tv.dims()[0], tv.dims()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::IdOutOfRange {
                    table: "embedding",
                    id,
                    size: v,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Picks rows of `x` viewed as `[R × last_dim]`.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let r = xv.numel() / d.max(1);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            if i >= r {
                return Err(Error::IdOutOfRange {
                    table: "rows",
                    id: i,
                    size: r,
                });
            }
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::new(vec![rows.len(), d], data)?;
        self.push(out, Op::SelectRows { x, rows: rows.to_vec() })
    }

    /// Applies `map` to each trailing block of `x`.
    pub fn block_map(&mut self, x: Var, map: Arc<dyn BlockLinear>) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = map.block_dims();
        let block = r * c;
        if xv.rank() < 2 || xv.dims()[xv.rank() - 2..] != [r, c] {
            return Err(Error::dims(map.name(), format!("input {:?}, block {r}×{c}", xv.dims())));
        }
        let mut out = vec![0.0; xv.numel()];
        for (src, dst) in xv.data().chunks(block).zip(out.chunks_mut(block)) {
            map.apply(src, dst);
        }
        let out = Tensor::new(xv.dims().to_vec(), out)?;
        self.push(out, Op::BlockMap { x, map })
    }

    /// Sequence-axis matrix product: `y[b] = w · x[b]` for `x: [B, n, d]`, `w: n×n`.
    pub fn seq_mix(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wv, xv) = (self.value(w), self.value(x));
        if xv.rank() != 3 || wv.rank() != 2 || wv.dims()[1] != xv.dims()[1] {
            return Err(Error::dims("seq_mix", format!("w {:?}, x {:?}", wv.dims(), xv.dims())));
        }
        let (batch, n, d) = (xv.dims()[0], xv.dims()[1], xv.dims()[2]);
        let m = wv.dims()[0];
        let mut out = vec![0.0; batch * m * d];
        for b in 0..batch {
            gemm(
                m,
                n,
                d,
                View::rows(wv.data(), n),
                View::rows(&xv.data()[b * n * d..], d),
                0.0,
                &mut out[b * m * d..],
                d,
            );
        }
        let out = Tensor::new(vec![batch, m, d], out)?;
        self.push(out, Op::SeqMix { w, x })
    }

    /// Multi-head scaled dot-product attention over `[B, n, d]` projections.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        dropout_rate: f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        check_rate(dropout_rate)?;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.rank() != 3 || qv.dims() != kv.dims() || qv.dims() != vv.dims() {
            return Err(Error::dims(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", qv.dims(), kv.dims(), vv.dims()),
            ));
        }
        let (batch, n, d) = (qv.dims()[0], qv.dims()[1], qv.dims()[2]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::dims(
                "attention",
                format!("d_h {d} not divisible by {heads} heads"),
            ));
        }
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut probs = vec![0.0; batch * heads * n * n];
        let mut out = vec![0.0; batch * n * d];
        let use_mask = mode == Mode::Train && dropout_rate > 0.0;
        let mut mask = use_mask.then(|| vec![0.0; probs.len()]);
        let mut scratch = vec![0.0; n * n];
        for b in 0..batch {
            for h in 0..heads {
                let off = b * n * d + h * dk;
                let p = &mut probs[(b * heads + h) * n * n..][..n * n];
                gemm(
                    n,
                    dk,
                    n,
                    View::strided(&qv.data()[off..], d, 1),
                    View::strided(&kv.data()[off..], d, 1).t(),
                    0.0,
                    p,
                    n,
                );
                p.iter_mut().for_each(|s| *s *= scale);
                kernels::softmax_rows_inplace(p, n);
                let weights: &[f64] = if let Some(mask) = mask.as_mut() {
                    let m = &mut mask[(b * heads + h) * n * n..][..n * n];
                    m.copy_from_slice(&kernels::dropout_mask(n * n, dropout_rate, rng));
                    for ((s, &pv), &mv) in scratch.iter_mut().zip(p.iter()).zip(m.iter()) {
                        *s = pv * mv;
                    }
                    &scratch
                } else {
                    p
                };
                gemm(
                    n,
                    n,
                    dk,
                    View::rows(weights, n),
                    View::strided(&vv.data()[off..], d, 1),
                    0.0,
                    &mut out[off..],
                    d,
                );
            }
        }
        let out = Tensor::new(vec![batch, n, d], out)?;
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
                mask,
            },
        )
    }

    /// Mean softmax cross-entropy of `logits[m×C]` against class `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.dims()[0] != labels.len() || labels.is_empty() {
            return Err(Error::dims(
                "cross_entropy",
                format!("logits {:?}, {} labels", lv.dims(), labels.len()),
            ));
        }
        let c = lv.dims()[1];
        let mut probs = lv.data().to_vec();
        kernels::softmax_rows_inplace(&mut probs, c);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::IdOutOfRange {
                    table: "classes",
                    id: y,
                    size: c,
                });
            }
            // log-sum-exp form keeps the loss finite when a probability underflows
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let out = Tensor::scalar(loss / labels.len() as f64);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::dims(
                "backward",
                format!("loss must be scalar, got {:?}", lv.dims()),
            ));
        }
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::filled(lv.dims(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = slots[idx].take() else { continue };
            let mut contributions = self.node_backward(node, &g)?;
            if self.corrupt == Some(node.op.kind()) {
                for (_, t) in &mut contributions {
                    t.data_mut().iter_mut().for_each(|v| *v *= 1.25);
                }
            }
            for (var, t) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut slots[var.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
            slots[idx] = Some(g);
        }
        Ok(Grads { slots })
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, p) = (av.dims()[0], av.dims()[1], bv.dims()[1]);
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        p,
                        k,
                        View::rows(g.data(), p),
                        View::rows(bv.data(), p).t(),
                        0.0,
                        &mut da,
                        k,
                    );
                    out.push((*a, Tensor::new(vec![m, k], da)?));
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * p];
                    gemm(
                        k,
                        m,
                        p,
                        View::rows(av.data(), k).t(),
                        View::rows(g.data(), p),
                        0.0,
                        &mut db,
                        p,
                    );
                    out.push((*b, Tensor::new(vec![k, p], db)?));
                }
            }
            Op::MatMulBt(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, p) = (av.dims()[0], av.dims()[1], bv.dims()[0]);
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        p,
                        k,
                        View::rows(g.data(), p),
                        View::rows(bv.data(), k),
                        0.0,
                        &mut da,
                        k,
                    );
                    out.push((*a, Tensor::new(vec![m, k], da)?));
                }
                if needs(*b) {
                    let mut db = vec![0.0; p * k];
                    gemm(
                        p,
                        m,
                        k,
                        View::rows(g.data(), p).t(),
                        View::rows(av.data(), k),
                        0.0,
                        &mut db,
                        k,
                    );
                    out.push((*b, Tensor::new(vec![p, k], db)?));
                }
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (k, p) = (wv.dims()[0], wv.dims()[1]);
                let rows = xv.numel() / k;
                if needs(*x) {
                    let mut dx = vec![0.0; rows * k];
                    gemm(
                        rows,
                        p,
                        k,
                        View::rows(g.data(), p),
                        View::rows(wv.data(), p).t(),
                        0.0,
                        &mut dx,
                        k,
                    );
                    out.push((*x, Tensor::new(xv.dims().to_vec(), dx)?));
                }
                if needs(*w) {
                    let mut dw = vec![0.0; k * p];
                    gemm(
                        k,
                        rows,
                        p,
                        View::rows(xv.data(), k).t(),
                        View::rows(g.data(), p),
                        0.0,
                        &mut dw,
                        p,
                    );
                    out.push((*w, Tensor::new(vec![k, p], dw)?));
                }
                if let Some(b) = b.filter(|b| needs(*b)) {
                    out.push((b, column_sums(g.data(), p)));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::AddBias(x, b) => {
                out.push((*x, g.clone()));
                if needs(*b) {
                    out.push((*b, column_sums(g.data(), g.last_dim())));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let da = g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                out.push((*a, Tensor::new(g.dims().to_vec(), da)?));
                out.push((*b, Tensor::new(g.dims().to_vec(), db)?));
            }
            Op::Scale(x, c) => out.push((*x, g.map(|v| v * c))),
            Op::Sum(x) => {
                let gs = g.data()[0];
                out.push((*x, Tensor::filled(val(*x).dims(), gs)));
            }
            Op::Reshape(x) => out.push((*x, g.clone().reshape(val(*x).dims())?)),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = val(*gamma);
                let d = gv.numel();
                let (dx, dgamma, dbeta) = kernels::layer_norm_backward(g.data(), xhat, inv_std, gv.data(), d);
                out.push((*x, Tensor::new(g.dims().to_vec(), dx)?));
                out.push((*gamma, Tensor::new(vec![d], dgamma)?));
                out.push((*beta, Tensor::new(vec![d], dbeta)?));
            }
            Op::Gelu { x, tanh } => {
                let dx = g
                    .data()
                    .iter()
                    .zip(val(*x).data())
                    .zip(tanh)
                    .map(|((g, &x), &t)| g * kernels::gelu_grad_with(x, t))
                    .collect();
                out.push((*x, Tensor::new(g.dims().to_vec(), dx)?));
            }
            Op::Tanh(x) => {
                let dx = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                out.push((*x, Tensor::new(g.dims().to_vec(), dx)?));
            }
            Op::Softmax { x, outer, len, inner } => {
                let dx = kernels::softmax_axis_backward(node.value.data(), g.data(), *outer, *len, *inner);
                out.push((*x, Tensor::new(g.dims().to_vec(), dx)?));
            }
            Op::Dropout { x, mask } => {
                let dx = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                out.push((*x, Tensor::new(g.dims().to_vec(), dx)?));
            }
            Op::Gather { table, ids } => {
                let tv = val(*table);
                let d = tv.dims()[1];
                let mut dt = Tensor::zeros(tv.dims());
                let acc = dt.data_mut();
                for (i, &id) in ids.iter().enumerate() {
                    for (a, gv) in acc[id * d..(id + 1) * d].iter_mut().zip(g.row(i)) {
                        *a += gv;
                    }
                }
                out.push((*table, dt));
            }
            Op::SelectRows { x, rows } => {
                let xv = val(*x);
                let d = xv.last_dim();
                let mut dx = Tensor::zeros(xv.dims());
                let acc = dx.data_mut();
                for (i, &r) in rows.iter().enumerate() {
                    for (a, gv) in acc[r * d..(r + 1) * d].iter_mut().zip(g.row(i)) {
                        *a += gv;
                    }
                }
                out.push((*x, dx));
            }
            Op::BlockMap { x, map } => {
                let (r, c) = map.block_dims();
                let mut dx = vec![0.0; g.numel()];
                for (src, dst) in g.data().chunks(r * c).zip(dx.chunks_mut(r * c)) {
                    map.apply_adjoint(src, dst);
                }
                out.push((*x, Tensor::new(g.dims().to_vec(), dx)?));
            }
            Op::SeqMix { w, x } => {
                let (wv, xv) = (val(*w), val(*x));
                let (batch, n, d) = (xv.dims()[0], xv.dims()[1], xv.dims()[2]);
                let m = wv.dims()[0];
                if needs(*w) {
                    let mut dw = vec![0.0; m * n];
                    for b in 0..batch {
                        gemm(
                            m,
                            d,
                            n,
                            View::rows(&g.data()[b * m * d..], d),
                            View::rows(&xv.data()[b * n * d..], d).t(),
                            1.0,
                            &mut dw,
                            n,
                        );
                    }
                    out.push((*w, Tensor::new(vec![m, n], dw)?));
                }
                if needs(*x) {
                    let mut dx = vec![0.0; batch * n * d];
                    for b in 0..batch {
                        gemm(
                            n,
                            m,
                            d,
                            View::rows(wv.data(), n).t(),
                            View::rows(&g.data()[b * m * d..], d),
                            0.0,
                            &mut dx[b * n * d..],
                            d,
                        );
                    }
                    out.push((*x, Tensor::new(xv.dims().to_vec(), dx)?));
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
                mask,
            } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let (batch, n, d) = (qv.dims()[0], qv.dims()[1], qv.dims()[2]);
                let dk = d / heads;
                let scale = 1.0 / (dk as f64).sqrt();
                let mut dq = vec![0.0; batch * n * d];
                let mut dkk = vec![0.0; batch * n * d];
                let mut dv = vec![0.0; batch * n * d];
                let mut dp = vec![0.0; n * n];
                let mut weights = vec![0.0; n * n];
                for b in 0..batch {
                    for h in 0..*heads {
                        let off = b * n * d + h * dk;
                        let base = (b * heads + h) * n * n;
                        let p = &probs[base..base + n * n];
                        let m = mask.as_ref().map(|m| &m[base..base + n * n]);
                        let w: &[f64] = match m {
                            Some(m) => {
                                for ((w, &pv), &mv) in weights.iter_mut().zip(p).zip(m) {
                                    *w = pv * mv;
                                }
                                &weights
                            }
                            None => p,
                        };
                        let gh = View::strided(&g.data()[off..], d, 1);
                        // dV = Wᵀ g
                        gemm(n, n, dk, View::rows(w, n).t(), gh, 0.0, &mut dv[off..], d);
                        // dW = g Vᵀ
                        gemm(
                            n,
                            dk,
                            n,
                            gh,
                            View::strided(&vv.data()[off..], d, 1).t(),
                            0.0,
                            &mut dp,
                            n,
                        );
                        if let Some(m) = m {
                            dp.iter_mut().zip(m).for_each(|(x, mv)| *x *= mv);
                        }
                        for r in 0..n {
                            let pr = &p[r * n..(r + 1) * n];
                            let dr = &mut dp[r * n..(r + 1) * n];
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            for (x, &pv) in dr.iter_mut().zip(pr) {
                                *x = pv * (*x - dot) * scale;
                            }
                        }
                        gemm(
                            n,
                            n,
                            dk,
                            View::rows(&dp, n),
                            View::strided(&kv.data()[off..], d, 1),
                            0.0,
                            &mut dq[off..],
                            d,
                        );
                        gemm(
                            n,
                            n,
                            dk,
                            View::rows(&dp, n).t(),
                            View::strided(&qv.data()[off..], d, 1),
                            0.0,
                            &mut dkk[off..],
                            d,
                        );
                    }
                }
                let dims = qv.dims().to_vec();
                out.push((*q, Tensor::new(dims.clone(), dq)?));
                out.push((*k, Tensor::new(dims.clone(), dkk)?));
                out.push((*v, Tensor::new(dims, dv)?));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = val(*logits).dims()[1];
                let scale = g.data()[0] / labels.len() as f64;
                let mut dl = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    dl[i * c + y] -= 1.0;
                }
                dl.iter_mut().for_each(|v| *v *= scale);
                out.push((*logits, Tensor::new(vec![labels.len(), c], dl)?));
            }
        }
        Ok(out)
    }
}

fn parents_of(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::MatMulBt(a, b) | Op::Add(a, b) | Op::AddBias(a, b) | Op::Mul(a, b) => {
            vec![*a, *b]
        }
        Op::Dense { x, w, b } => {
            let mut p = vec![*x, *w];
            p.extend(b);
            p
        }
        Op::Scale(x, _) | Op::Sum(x) | Op::Reshape(x) | Op::Tanh(x) => vec![*x],
        Op::Gelu { x, .. } => vec![*x],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Softmax { x, .. } | Op::Dropout { x, .. } | Op::SelectRows { x, .. } | Op::BlockMap { x, .. } => {
            vec![*x]
        }
        Op::Gather { table, .. } => vec![*table],
        Op::SeqMix { w, x } => vec![*w, *x],
        Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}

fn column_sums(data: &[f64], width: usize) -> Tensor {
    let mut sums = vec![0.0; width];
    for row in data.chunks(width) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    Tensor::new(vec![width], sums).expect("width matches")
}

pub(crate) fn axis_split(dims: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= dims.len() {
        return Err(Error::dims(op, format!("axis {axis} out of range for {dims:?}")));
    }
    let len = dims[axis];
    if len == 0 {
        return Err(Error::dims(op, "empty axis"));
    }
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    Ok((outer, len, inner))
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")))
    }
}
