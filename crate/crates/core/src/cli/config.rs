//! The flat `key = value` run configuration shared by every subcommand.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::str::FromStr;

use crate::bench::{FlopConvention, Phase, SweepConfig, Timing};
use crate::error::{Error, Result};
use crate::kv::{self, Entry};
use crate::model::{MixingKind, ModelConfig, Preset, Variant};
use crate::tasks::{MaskConfig, RecallAlphabet};
use crate::trainer::{AdamConfig, PretrainTask, RecallTask, Task, TrainConfig};

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn spec(key: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

pub const KEYS: &[KeySpec] = &[
    spec("out_dir", "runs", "output directory"),
    spec("seed", "0", "seeds model initialization and data streams"),
    // model
    spec("preset", "desk", "desk, base, large, tiny or d<hidden>_l<layers>"),
    spec(
        "variant",
        "fnet_fft",
        "model family; flops and params list all when unset",
    ),
    spec(
        "mixing_plan",
        "",
        "comma-separated mixing kind per layer, overrides the variant",
    ),
    spec("seq_len", "64", "sequence length n"),
    spec("hidden_dim", "64", "hidden size d_h"),
    spec("ff_dim", "256", "feed-forward size"),
    spec("num_layers", "4", "encoder layers"),
    spec("num_heads", "1", "attention heads"),
    spec("vocab_size", "256", "vocabulary size"),
    spec("dropout_rate", "0.1", "dropout probability"),
    spec("layer_norm_eps", "1e-12", "layer norm epsilon"),
    // training
    spec("task", "recall", "recall or pretrain"),
    spec("batch_size", "32", "examples per step"),
    spec("total_steps", "3000", "optimizer steps"),
    spec("learning_rate", "0.001", "peak learning rate"),
    spec("warmup_steps", "300", "linear warmup steps, then linear decay to 0"),
    spec("beta1", "0.9", "Adam beta1"),
    spec("beta2", "0.999", "Adam beta2"),
    spec("adam_epsilon", "1e-6", "Adam epsilon"),
    spec(
        "weight_decay",
        "0.01",
        "decoupled weight decay (not on norms and biases)",
    ),
    spec("clip_norm", "1.0", "global gradient-norm ceiling, 0 disables"),
    spec("eval_every", "100", "steps between logged evaluations"),
    spec("eval_batches", "10", "batches per evaluation"),
    spec("checkpoint_every", "0", "steps between checkpoints, 0 disables"),
    spec("num_kv_pairs", "4", "recall: key/value pairs per example"),
    spec("num_keys", "16", "recall: key alphabet size"),
    spec("num_values", "16", "recall: value alphabet size"),
    spec("num_docs", "2000", "pretrain: documents in the toy corpus"),
    spec("sentences_per_doc", "8", "pretrain: sentences per document"),
    spec("mask_rate", "0.15", "pretrain: share of content tokens predicted"),
    // benchmarks
    spec(
        "variants",
        "bert,linear,fnet_fft,fnet_mat,ff_only",
        "bench/sweep: variants",
    ),
    spec("lengths", "128,256,512,1024", "bench/sweep: sequence lengths"),
    spec(
        "phases",
        "",
        "bench/sweep: phases; bench defaults to mixing_fwd_bwd, sweep to forward,train_step",
    ),
    spec("bench_batch", "1", "bench/sweep: batch size"),
    spec("bench_layers", "2", "bench/sweep: encoder layers of full-model phases"),
    spec("repeats", "5", "bench/sweep: timed repeats (3 with --quick)"),
    spec("warmup", "2", "bench/sweep: discarded runs before timing"),
    spec(
        "memory_budget_mb",
        "4096",
        "bench/sweep: cells estimated above this are recorded as oom",
    ),
    spec(
        "crossover",
        "true",
        "sweep: also time the matrix DFT path to locate the FFT crossover",
    ),
    spec(
        "include_output_projection",
        "false",
        "flops: count the vocabulary projection of the MLM head",
    ),
    spec("mac_to_flop", "2", "flops: FLOPs per multiply-accumulate"),
];

fn spec_of(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

/// Every key of [`KEYS`] with its resolved value. Defaults are overridden
/// by file entries, which are overridden by command-line entries.
#[derive(Clone, Debug)]
pub struct RunConfig {
    entries: Vec<Entry>,
    set: BTreeSet<&'static str>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            entries: KEYS
                .iter()
                .map(|s| Entry {
                    key: s.key.to_string(),
                    value: s.default.to_string(),
                    line: 0,
                })
                .collect(),
            set: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    /// Applies config-file text; errors name the offending line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for e in kv::parse(text)? {
            if spec_of(&e.key).is_none() {
                return Err(Error::Config {
                    line: e.line,
                    msg: format!("unknown key `{}`", e.key),
                });
            }
            self.put(e);
        }
        Ok(())
    }

    /// Applies a command-line `--key value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if spec_of(key).is_none() {
            return Err(Error::UnknownKey(key.to_string()));
        }
        self.put(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line: 0,
        });
        Ok(())
    }

    fn put(&mut self, e: Entry) {
        let spec = spec_of(&e.key).expect("known key");
        self.set.insert(spec.key);
        let slot = self
            .entries
            .iter_mut()
            .find(|x| x.key == e.key)
            .expect("every key present");
        *slot = e;
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.set.contains(key)
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.entry(key).value
    }

    fn entry(&self, key: &str) -> &Entry {
        self.entries
            .iter()
            .find(|e| e.key == key)
            .unwrap_or_else(|| panic!("no config key `{key}`"))
    }

    fn bad(&self, key: &str, msg: impl Display) -> Error {
        let e = self.entry(key);
        if e.line > 0 {
            Error::Config {
                line: e.line,
                msg: format!("`{key}`: {msg}"),
            }
        } else {
            Error::InvalidArgument(format!("--{key}: {msg}"))
        }
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let e = self.entry(key);
        e.value
            .parse()
            .map_err(|err: T::Err| self.bad(key, format!("bad value `{}`: {err}", e.value)))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        let e = self.entry(key);
        kv::bool_value(e).map_err(|_| self.bad(key, format!("bad boolean `{}`", e.value)))
    }

    pub fn get_list<T>(&self, key: &str) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|err: T::Err| self.bad(key, format!("bad item `{s}`: {err}")))
            })
            .collect()
    }

    /// Resolved configuration, one `key = value` line per key.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} = {}\n", e.key, e.value))
            .collect()
    }

    pub fn model_config_for(&self, variant: Variant) -> Result<ModelConfig> {
        let preset = self.raw("preset");
        let mut cfg = if preset == "desk" {
            let mut c = ModelConfig::small(
                self.get("seq_len")?,
                self.get("hidden_dim")?,
                self.get("num_layers")?,
                variant,
            );
            c.ff_dim = self.get("ff_dim")?;
            c.num_heads = self.get("num_heads")?;
            c.vocab_size = self.get("vocab_size")?;
            c.dropout_rate = self.get("dropout_rate")?;
            c.layer_norm_eps = self.get("layer_norm_eps")?;
            c
        } else {
            let p: Preset = self.get("preset")?;
            let mut c = ModelConfig::preset(p, variant);
            // explicit fields refine a preset
            let mut bert = true;
            if self.is_set("seq_len") {
                c.seq_len = self.get("seq_len")?;
            }
            if self.is_set("num_layers") {
                c.num_layers = self.get("num_layers")?;
                c.mixing_plan = variant.plan(c.num_layers);
            }
            if self.is_set("hidden_dim") {
                c.hidden_dim = self.get("hidden_dim")?;
                bert = false;
            }
            if self.is_set("ff_dim") {
                c.ff_dim = self.get("ff_dim")?;
                bert = false;
            }
            if self.is_set("num_heads") {
                c.num_heads = self.get("num_heads")?;
                bert = false;
            }
            if self.is_set("vocab_size") {
                c.vocab_size = self.get("vocab_size")?;
            }
            if self.is_set("dropout_rate") {
                c.dropout_rate = self.get("dropout_rate")?;
            }
            if self.is_set("layer_norm_eps") {
                c.layer_norm_eps = self.get("layer_norm_eps")?;
            }
            c.bert_compatible = bert;
            c
        };
        let plan: Vec<MixingKind> = self.get_list("mixing_plan")?;
        if !plan.is_empty() {
            cfg.num_layers = plan.len();
            cfg.mixing_plan = plan;
        }
        cfg.seed = self.get("seed")?;
        cfg.validate().map_err(|e| self.bad("preset", e))?;
        Ok(cfg)
    }

    pub fn variant(&self) -> Result<Variant> {
        self.get("variant")
    }

    /// The model the train command builds, with the task's head.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = self.model_config_for(self.variant()?)?;
        self.task()?.configure(&mut cfg);
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.get("batch_size")?,
            total_steps: self.get("total_steps")?,
            learning_rate: self.get("learning_rate")?,
            warmup_steps: self.get("warmup_steps")?,
            adam: AdamConfig {
                beta1: self.get("beta1")?,
                beta2: self.get("beta2")?,
                epsilon: self.get("adam_epsilon")?,
                weight_decay: self.get("weight_decay")?,
            },
            clip_norm: self.get("clip_norm")?,
            eval_every: self.get("eval_every")?,
            eval_batches: self.get("eval_batches")?,
            checkpoint_every: self.get("checkpoint_every")?,
            seed: self.get("seed")?,
        };
        cfg.validate().map_err(|e| self.bad("total_steps", e))?;
        Ok(cfg)
    }

    pub fn task(&self) -> Result<Task> {
        match self.raw("task") {
            "recall" => Ok(Task::Recall(RecallTask {
                num_kv_pairs: self.get("num_kv_pairs")?,
                alphabet: RecallAlphabet {
                    num_keys: self.get("num_keys")?,
                    num_values: self.get("num_values")?,
                },
            })),
            "pretrain" => Ok(Task::Pretrain(PretrainTask {
                num_docs: self.get("num_docs")?,
                sentences_per_doc: self.get("sentences_per_doc")?,
                corpus_seed: self.get("seed")?,
                mask: MaskConfig {
                    mask_rate: self.get("mask_rate")?,
                    ..MaskConfig::default()
                },
                ..PretrainTask::default()
            })),
            other => Err(self.bad("task", format!("unknown task `{other}`"))),
        }
    }

    /// Sweep grid; `default_phases` applies when `phases` is empty.
    pub fn sweep_config(&self, default_phases: &[Phase], crossover: bool) -> Result<SweepConfig> {
        let mut phases: Vec<Phase> = self.get_list("phases")?;
        if phases.is_empty() {
            phases = default_phases.to_vec();
        }
        let timing = Timing {
            warmup: self.get("warmup")?,
            repeats: self.get("repeats")?,
            memory_budget: self.get::<usize>("memory_budget_mb")? << 20,
        };
        if timing.repeats == 0 {
            return Err(self.bad("repeats", "must be positive"));
        }
        Ok(SweepConfig {
            variants: self.get_list("variants")?,
            lengths: self.get_list("lengths")?,
            hidden_dim: self.get("hidden_dim")?,
            num_layers: self.get("bench_layers")?,
            batch: self.get("bench_batch")?,
            phases,
            timing,
            crossover: crossover && self.get_bool("crossover")?,
            threads: 1,
        })
    }

    pub fn flop_convention(&self) -> Result<FlopConvention> {
        Ok(FlopConvention {
            mac_to_flop: self.get("mac_to_flop")?,
            include_output_projection: self.get_bool("include_output_projection")?,
        })
    }
}

/// `--help` text: every key with its default.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|s| s.key.len()).max().unwrap_or(0);
    let mut s =
        String::from("Config keys (file `key = value` lines, overridden by `--key value` on the command line):\n");
    for k in KEYS {
        let default = if k.default.is_empty() { "\"\"" } else { k.default };
        s.push_str(&format!("  {:width$}  {}  [default: {}]\n", k.key, k.help, default));
    }
    s
}
