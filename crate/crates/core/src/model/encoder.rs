use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, BlockLinear, Mode, Rng, Tape, Tensor, Var};
use crate::transforms::{DftMethod, FourierMixer, SeparableMixer};

use super::config::{HeadKind, MixingKind, ModelConfig};
use super::params::{param_specs, DenseIds, HeadIds, MixIds, NormIds, ParamId, ParamIds, ParamStore};

/// A batch of equal-length token sequences, flattened row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderInput {
    pub ids: Vec<usize>,
    pub type_ids: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl EncoderInput {
    pub fn new(ids: Vec<usize>, type_ids: Vec<usize>, batch: usize, len: usize) -> Result<Self> {
        if ids.len() != batch * len || type_ids.len() != ids.len() || batch == 0 || len == 0 {
            return Err(Error::dims(
                "encoder_input",
                format!(
                    "{} ids, {} type ids for batch {batch} × len {len}",
                    ids.len(),
                    type_ids.len()
                ),
            ));
        }
        Ok(EncoderInput {
            ids,
            type_ids,
            batch,
            len,
        })
    }

    /// One sequence, all type ids 0.
    pub fn single(ids: &[usize]) -> Result<Self> {
        EncoderInput::new(ids.to_vec(), vec![0; ids.len()], 1, ids.len())
    }
}

/// Tape handles for the model's parameters, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Handles in [`ParamStore`] order, e.g. leaves created by a gradient check.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.index()]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[B, len, d_h]`.
    pub sequence: Var,
    /// `[B, d_h]`: `tanh(dense(sequence[:, 0]))`.
    pub pooled: Var,
}

/// Encoder parameters plus the fixed mixing operators they run with.
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
    mixers: Vec<Option<Arc<dyn BlockLinear>>>,
}

fn build_mixers(cfg: &ModelConfig, threads: usize) -> Result<Vec<Option<Arc<dyn BlockLinear>>>> {
    let (n, d) = (cfg.seq_len, cfg.hidden_dim);
    let mut cache: HashMap<MixingKind, Arc<dyn BlockLinear>> = HashMap::new();
    let mut out = Vec::with_capacity(cfg.num_layers);
    for &kind in &cfg.mixing_plan {
        let make = || -> Result<Option<Arc<dyn BlockLinear>>> {
            let fourier = |method, seq_only| -> Result<Arc<dyn BlockLinear>> {
                Ok(Arc::new(
                    FourierMixer::new(n, d, method, seq_only)?.with_threads(threads),
                ))
            };
            Ok(Some(match kind {
                MixingKind::FourierFft => fourier(DftMethod::Fft, false)?,
                MixingKind::FourierMatrix => fourier(DftMethod::Matrix, false)?,
                MixingKind::FourierSeqOnly if n.is_power_of_two() => fourier(DftMethod::Fft, true)?,
                MixingKind::FourierSeqOnly => fourier(DftMethod::Matrix, true)?,
                MixingKind::Hartley => Arc::new(SeparableMixer::hartley(n, d)?),
                MixingKind::Hadamard => Arc::new(SeparableMixer::hadamard(n, d)?),
                MixingKind::Dct => Arc::new(SeparableMixer::dct(n, d)?),
                MixingKind::Attention | MixingKind::Linear | MixingKind::Random | MixingKind::Identity => {
                    return Ok(None)
                }
            }))
        };
        let mixer = match cache.get(&kind) {
            Some(m) => Some(m.clone()),
            None => {
                let m = make()?;
                if let Some(m) = &m {
                    cache.insert(kind, m.clone());
                }
                m
            }
        };
        out.push(mixer);
    }
    Ok(out)
}

impl Model {
    /// Freshly initialized model, seeded by `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (specs, _) = param_specs(&cfg);
        let params = ParamStore::initialize(specs, cfg.seed)?;
        Model::from_params(cfg, params)
    }

    /// Wraps existing tensors, checking names and dims against `cfg`.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        crate::numerics::retain_freed_memory();
        cfg.validate()?;
        let (specs, ids) = param_specs(&cfg);
        if specs.len() != params.len() {
            return Err(Error::CheckpointDims {
                name: "<tensor count>".into(),
                expected: vec![specs.len()],
                found: vec![params.len()],
            });
        }
        for (spec, (_, p)) in specs.iter().zip(params.iter()) {
            if spec.name != p.spec.name {
                return Err(Error::Unknown {
                    what: "parameter",
                    name: p.spec.name.clone(),
                });
            }
            if spec.dims != p.value.dims() {
                return Err(Error::CheckpointDims {
                    name: spec.name.clone(),
                    expected: spec.dims.clone(),
                    found: p.value.dims().to_vec(),
                });
            }
        }
        let mixers = build_mixers(&cfg, 1)?;
        Ok(Model {
            cfg,
            params,
            ids,
            mixers,
        })
    }

    /// Splits Fourier row transforms over `threads` workers.
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        self.mixers = build_mixers(&self.cfg, threads.max(1))?;
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Records every tensor on `tape`; frozen tensors become constants.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|(_, p)| {
                    if p.spec.trainable {
                        tape.param(p.value.clone())
                    } else {
                        tape.constant(p.value.clone())
                    }
                })
                .collect(),
        )
    }

    fn check_input(&self, input: &EncoderInput) -> Result<()> {
        let cfg = &self.cfg;
        let fixed = cfg.mixing_plan.iter().any(|k| k.depends_on_length());
        if input.len > cfg.seq_len || (fixed && input.len != cfg.seq_len) {
            return Err(Error::dims(
                "embed",
                format!(
                    "sequence length {} for a model with n = {}{}",
                    input.len,
                    cfg.seq_len,
                    if fixed { " (mixing needs exactly n)" } else { "" }
                ),
            ));
        }
        if let Some(&t) = input.type_ids.iter().find(|&&t| t >= cfg.type_vocab_size) {
            return Err(Error::IdOutOfRange {
                table: "type",
                id: t,
                size: cfg.type_vocab_size,
            });
        }
        if let Some(&t) = input.ids.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::IdOutOfRange {
                table: "word",
                id: t,
                size: cfg.vocab_size,
            });
        }
        Ok(())
    }

    fn dense(&self, tape: &mut Tape, b: &Bound, x: Var, ids: DenseIds) -> Result<Var> {
        tape.dense(x, b.var(ids.kernel), ids.bias.map(|i| b.var(i)))
    }

    fn norm(&self, tape: &mut Tape, b: &Bound, x: Var, ids: NormIds) -> Result<Var> {
        tape.layer_norm(x, b.var(ids.gamma), b.var(ids.beta), self.cfg.layer_norm_eps)
    }

    /// Word + position + type lookups, then layer norm and dropout: `[B, len, d_h]`.
    pub fn embed(&self, tape: &mut Tape, b: &Bound, input: &EncoderInput, mode: Mode, rng: &mut Rng) -> Result<Var> {
        self.check_input(input)?;
        let e = self.ids.embed;
        let dims = [input.batch, input.len, self.cfg.hidden_dim];
        let mut x = tape.gather(b.var(e.word), &input.ids)?;
        let t = tape.gather(b.var(e.token_type), &input.type_ids)?;
        x = tape.add(x, t)?;
        if let Some(pos) = e.position {
            let positions: Vec<usize> = (0..input.batch).flat_map(|_| 0..input.len).collect();
            let p = tape.gather(b.var(pos), &positions)?;
            x = tape.add(x, p)?;
        }
        let x = tape.reshape(x, &dims)?;
        let x = self.norm(tape, b, x, e.norm)?;
        tape.dropout(x, self.cfg.dropout_rate, mode, rng)
    }

    /// The mixing sublayer of layer `i` before its residual and norm.
    pub fn mix(&self, tape: &mut Tape, b: &Bound, layer: usize, x: Var, mode: Mode, rng: &mut Rng) -> Result<Var> {
        let ids = &self.ids.layers[layer];
        if let Some(m) = &self.mixers[layer] {
            return tape.block_map(x, m.clone());
        }
        match ids.mix {
            MixIds::Attention {
                query,
                key,
                value,
                output,
            } => {
                let q = self.dense(tape, b, x, query)?;
                let k = self.dense(tape, b, x, key)?;
                let v = self.dense(tape, b, x, value)?;
                let a = tape.attention(q, k, v, self.cfg.num_heads, self.cfg.dropout_rate, mode, rng)?;
                self.dense(tape, b, a, output)
            }
            MixIds::Matrices { seq, hidden_kernel } => {
                let h = tape.dense(x, b.var(hidden_kernel), None)?;
                tape.seq_mix(b.var(seq), h)
            }
            MixIds::None => Ok(x),
        }
    }

    /// One encoder block: mixing, residual, norm, feed-forward, residual, norm.
    pub fn layer(&self, tape: &mut Tape, b: &Bound, i: usize, x: Var, mode: Mode, rng: &mut Rng) -> Result<Var> {
        let ids = self.ids.layers[i];
        let rate = self.cfg.dropout_rate;
        let mut h = x;
        if let Some(mix_norm) = ids.mix_norm {
            let m = self.mix(tape, b, i, h, mode, rng)?;
            let m = tape.dropout(m, rate, mode, rng)?;
            let r = tape.add(h, m)?;
            h = self.norm(tape, b, r, mix_norm)?;
        }
        let f = self.dense(tape, b, h, ids.ff_in)?;
        let f = tape.gelu(f)?;
        let f = self.dense(tape, b, f, ids.ff_out)?;
        let f = tape.dropout(f, rate, mode, rng)?;
        let r = tape.add(h, f)?;
        self.norm(tape, b, r, ids.out_norm)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        input: &EncoderInput,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<EncoderOutput> {
        let mut x = self.embed(tape, b, input, mode, rng)?;
        for i in 0..self.cfg.num_layers {
            x = self.layer(tape, b, i, x, mode, rng)?;
        }
        let first: Vec<usize> = (0..input.batch).map(|s| s * input.len).collect();
        let cls = tape.select_rows(x, &first)?;
        let pooled = self.dense(tape, b, cls, self.ids.pooler)?;
        let pooled = tape.tanh(pooled)?;
        Ok(EncoderOutput { sequence: x, pooled })
    }

    /// MLM logits `[#masked, V]` at flat rows `b·len + pos`, and NSP logits `[B, 2]`.
    pub fn pretrain_heads(
        &self,
        tape: &mut Tape,
        b: &Bound,
        out: EncoderOutput,
        masked_rows: &[usize],
    ) -> Result<(Var, Var)> {
        let HeadIds::Pretrain {
            transform,
            norm,
            decoder,
            output_bias,
            nsp,
        } = self.ids.head
        else {
            return Err(Error::InvalidArgument("model has no pretraining heads".into()));
        };
        let h = tape.select_rows(out.sequence, masked_rows)?;
        let h = self.dense(tape, b, h, transform)?;
        let h = tape.gelu(h)?;
        let h = self.norm(tape, b, h, norm)?;
        let logits = match decoder {
            Some(k) => tape.dense(h, b.var(k), None)?,
            None => tape.matmul_bt(h, b.var(self.ids.embed.word))?,
        };
        let mlm = tape.add_bias(logits, b.var(output_bias))?;
        let nsp = self.dense(tape, b, out.pooled, nsp)?;
        Ok((mlm, nsp))
    }

    /// Classifier logits `[B, C]` from the pooled output.
    pub fn classify(&self, tape: &mut Tape, b: &Bound, out: EncoderOutput) -> Result<Var> {
        match self.ids.head {
            HeadIds::Classify { classifier } => self.dense(tape, b, out.pooled, classifier),
            HeadIds::Pretrain { .. } => Err(Error::InvalidArgument("model has no classifier head".into())),
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.cfg.head {
            HeadKind::Classify { num_classes } => Some(num_classes),
            HeadKind::Pretrain => None,
        }
    }

    /// Eval-mode `(sequence_output, pooled)` without recording gradients.
    pub fn encode(&self, input: &EncoderInput) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let mut rng = rng_from_seed(0);
        let out = self.forward(&mut tape, &b, input, Mode::Eval, &mut rng)?;
        Ok((tape.value(out.sequence).clone(), tape.value(out.pooled).clone()))
    }
}
