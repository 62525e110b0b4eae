use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{child_rng, Tensor};

use super::config::{HeadKind, MixingKind, ModelConfig};

/// Standard deviation of the normal initializer for kernels and embeddings.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Whether the optimizer applies weight decay to a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    Apply,
    Exclude,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
    pub trainable: bool,
    pub decay: Decay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub spec: ParamSpec,
    pub value: Tensor,
}

/// Named tensors in construction order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    /// Draws every tensor from its spec; tensor `i` uses the stream
    /// `child_rng(seed, i)`, so values do not depend on evaluation order.
    pub fn initialize(specs: Vec<ParamSpec>, seed: u64) -> Result<Self> {
        let mut store = ParamStore::default();
        for (i, spec) in specs.into_iter().enumerate() {
            let numel = spec.dims.iter().product();
            let data = match spec.init {
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
                Init::Normal(std) => {
                    let dist =
                        Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(format!("init std {std}: {e}")))?;
                    let mut rng = child_rng(seed, i as u64);
                    (0..numel).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            let value = Tensor::new(spec.dims.clone(), data)?;
            store.push(Param { spec, value })?;
        }
        Ok(store)
    }

    pub(crate) fn push(&mut self, p: Param) -> Result<ParamId> {
        if self.index.contains_key(&p.spec.name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{}`", p.spec.name)));
        }
        self.index.insert(p.spec.name.clone(), self.params.len());
        self.params.push(p);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Element count of all trainable tensors.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.spec.trainable)
            .map(|p| p.value.numel())
            .sum()
    }
}

/// Slot ids of one layer norm.
#[derive(Clone, Copy, Debug)]
pub struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseIds {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
pub enum MixIds {
    /// Parameter-free mixing or no mixing at all.
    None,
    Attention {
        query: DenseIds,
        key: DenseIds,
        value: DenseIds,
        output: DenseIds,
    },
    /// `W_seq · x · K` where `K = W_hidᵀ` is stored as a dense kernel.
    Matrices { seq: ParamId, hidden_kernel: ParamId },
}

#[derive(Clone, Copy, Debug)]
pub struct LayerIds {
    pub mix: MixIds,
    pub mix_norm: Option<NormIds>,
    pub ff_in: DenseIds,
    pub ff_out: DenseIds,
    pub out_norm: NormIds,
}

#[derive(Clone, Copy, Debug)]
pub struct EmbedIds {
    pub word: ParamId,
    pub position: Option<ParamId>,
    pub token_type: ParamId,
    pub norm: NormIds,
}

#[derive(Clone, Copy, Debug)]
pub enum HeadIds {
    Pretrain {
        transform: DenseIds,
        norm: NormIds,
        /// Untied decoder kernel `[d_h, V]`; `None` when tied to the word table.
        decoder: Option<ParamId>,
        output_bias: ParamId,
        nsp: DenseIds,
    },
    Classify {
        classifier: DenseIds,
    },
}

/// Typed slots for every tensor of a model.
#[derive(Clone, Debug)]
pub struct ParamIds {
    pub embed: EmbedIds,
    pub layers: Vec<LayerIds>,
    pub pooler: DenseIds,
    pub head: HeadIds,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, dims: Vec<usize>, init: Init, trainable: bool, decay: Decay) -> ParamId {
        self.specs.push(ParamSpec {
            name,
            dims,
            init,
            trainable,
            decay,
        });
        ParamId(self.specs.len() - 1)
    }

    fn weight(&mut self, name: String, dims: Vec<usize>) -> ParamId {
        self.add(name, dims, Init::Normal(INIT_STD), true, Decay::Apply)
    }

    fn dense(&mut self, prefix: &str, k: usize, p: usize, bias: bool) -> DenseIds {
        let kernel = self.weight(format!("{prefix}.kernel"), vec![k, p]);
        let bias = bias.then(|| self.add(format!("{prefix}.bias"), vec![p], Init::Zeros, true, Decay::Exclude));
        DenseIds { kernel, bias }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gamma: self.add(format!("{prefix}.gamma"), vec![d], Init::Ones, true, Decay::Exclude),
            beta: self.add(format!("{prefix}.beta"), vec![d], Init::Zeros, true, Decay::Exclude),
        }
    }
}

/// Parameter specs and their slots for `cfg`, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> (Vec<ParamSpec>, ParamIds) {
    let (n, d, ff, v) = (cfg.seq_len, cfg.hidden_dim, cfg.ff_dim, cfg.vocab_size);
    let mut b = Builder { specs: Vec::new() };
    let embed = EmbedIds {
        word: b.weight("embeddings.word".into(), vec![v, d]),
        position: cfg
            .use_position_embeddings
            .then(|| b.weight("embeddings.position".into(), vec![n, d])),
        token_type: b.weight("embeddings.type".into(), vec![cfg.type_vocab_size, d]),
        norm: b.norm("embeddings.norm", d),
    };
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for (i, kind) in cfg.mixing_plan.iter().enumerate() {
        let p = format!("layer{i}");
        let mix = match kind {
            MixingKind::Attention => MixIds::Attention {
                query: b.dense(&format!("{p}.attention.query"), d, d, true),
                key: b.dense(&format!("{p}.attention.key"), d, d, true),
                value: b.dense(&format!("{p}.attention.value"), d, d, true),
                output: b.dense(&format!("{p}.attention.output"), d, d, true),
            },
            MixingKind::Linear => MixIds::Matrices {
                seq: b.weight(format!("{p}.mixing.seq"), vec![n, n]),
                hidden_kernel: b.weight(format!("{p}.mixing.hidden_kernel"), vec![d, d]),
            },
            MixingKind::Random => MixIds::Matrices {
                seq: b.add(
                    format!("{p}.mixing.seq"),
                    vec![n, n],
                    Init::Normal(1.0 / (n as f64).sqrt()),
                    false,
                    Decay::Exclude,
                ),
                hidden_kernel: b.add(
                    format!("{p}.mixing.hidden_kernel"),
                    vec![d, d],
                    Init::Normal(1.0 / (d as f64).sqrt()),
                    false,
                    Decay::Exclude,
                ),
            },
            _ => MixIds::None,
        };
        let mix_norm = (*kind != MixingKind::Identity).then(|| b.norm(&format!("{p}.mixing_norm"), d));
        layers.push(LayerIds {
            mix,
            mix_norm,
            ff_in: b.dense(&format!("{p}.ff.intermediate"), d, ff, true),
            ff_out: b.dense(&format!("{p}.ff.output"), ff, d, true),
            out_norm: b.norm(&format!("{p}.output_norm"), d),
        });
    }
    let pooler = b.dense("pooler", d, d, true);
    let head = match cfg.head {
        HeadKind::Pretrain => HeadIds::Pretrain {
            transform: b.dense("mlm.transform", d, d, true),
            norm: b.norm("mlm.norm", d),
            decoder: (!cfg.tie_word_embeddings).then(|| b.weight("mlm.decoder.kernel".into(), vec![d, v])),
            output_bias: b.add("mlm.output_bias".into(), vec![v], Init::Zeros, true, Decay::Exclude),
            nsp: b.dense("nsp", d, 2, true),
        },
        HeadKind::Classify { num_classes } => HeadIds::Classify {
            classifier: b.dense("classifier", d, num_classes, true),
        },
    };
    (
        b.specs,
        ParamIds {
            embed,
            layers,
            pooler,
            head,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Variant;

    #[test]
    fn initialization_is_deterministic_per_tensor() {
        let cfg = ModelConfig::small(8, 16, 2, Variant::Random);
        let (specs, _) = param_specs(&cfg);
        let a = ParamStore::initialize(specs.clone(), 5).unwrap();
        let b = ParamStore::initialize(specs.clone(), 5).unwrap();
        let c = ParamStore::initialize(specs, 6).unwrap();
        assert_eq!(a, b);
        let seq = a.by_name("layer0.mixing.seq").unwrap();
        assert_ne!(seq, c.by_name("layer0.mixing.seq").unwrap());
        assert!(!a.get(a.id("layer0.mixing.seq").unwrap()).spec.trainable);
    }

    #[test]
    fn initializer_statistics() {
        let cfg = ModelConfig::small(64, 64, 1, Variant::Random);
        let (specs, _) = param_specs(&cfg);
        let store = ParamStore::initialize(specs, 0).unwrap();
        let std = |t: &Tensor| (t.data().iter().map(|v| v * v).sum::<f64>() / t.numel() as f64).sqrt();
        let word = store.by_name("embeddings.word").unwrap();
        assert!((std(word) - INIT_STD).abs() < 0.002);
        let seq = store.by_name("layer0.mixing.seq").unwrap();
        assert!((std(seq) - 0.125).abs() < 0.01);
        assert!(store
            .by_name("layer0.mixing_norm.gamma")
            .unwrap()
            .data()
            .iter()
            .all(|&g| g == 1.0));
        assert!(store.by_name("pooler.bias").unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn identity_layers_have_no_mixing_norm() {
        let cfg = ModelConfig::small(8, 16, 1, Variant::FfOnly);
        let (specs, ids) = param_specs(&cfg);
        assert!(ids.layers[0].mix_norm.is_none());
        assert!(specs.iter().all(|s| !s.name.contains("mixing")));
    }
}
