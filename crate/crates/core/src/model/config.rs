use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;

use super::layout::{build_layout, Layout};

/// Token-mixing mechanism of one encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixingKind {
    FourierFft,
    FourierMatrix,
    FourierSeqOnly,
    Attention,
    Linear,
    Random,
    Identity,
    Hartley,
    Hadamard,
    Dct,
}

impl MixingKind {
    pub const ALL: [MixingKind; 10] = [
        MixingKind::FourierFft,
        MixingKind::FourierMatrix,
        MixingKind::FourierSeqOnly,
        MixingKind::Attention,
        MixingKind::Linear,
        MixingKind::Random,
        MixingKind::Identity,
        MixingKind::Hartley,
        MixingKind::Hadamard,
        MixingKind::Dct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MixingKind::FourierFft => "fourier_fft",
            MixingKind::FourierMatrix => "fourier_matrix",
            MixingKind::FourierSeqOnly => "fourier_seq",
            MixingKind::Attention => "attention",
            MixingKind::Linear => "linear",
            MixingKind::Random => "random",
            MixingKind::Identity => "identity",
            MixingKind::Hartley => "hartley",
            MixingKind::Hadamard => "hadamard",
            MixingKind::Dct => "dct",
        }
    }

    /// True when the mixing sublayer has no learnable parameters.
    pub fn is_parameter_free(self) -> bool {
        !matches!(self, MixingKind::Attention | MixingKind::Linear)
    }

    /// True when the mixing weights depend on the sequence length.
    pub fn depends_on_length(self) -> bool {
        !matches!(self, MixingKind::Attention | MixingKind::Identity)
    }

    pub fn needs_power_of_two(self) -> bool {
        matches!(self, MixingKind::FourierFft | MixingKind::Hadamard)
    }
}

impl fmt::Display for MixingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MixingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "mixing kind",
                name: s.to_string(),
            })
    }
}

/// Output heads attached to the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// Masked-token and next-sentence heads.
    Pretrain,
    /// Dense classifier on the pooled output.
    Classify { num_classes: usize },
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadKind::Pretrain => f.write_str("pretrain"),
            HeadKind::Classify { num_classes } => write!(f, "classify:{num_classes}"),
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "pretrain" {
            return Ok(HeadKind::Pretrain);
        }
        s.strip_prefix("classify:")
            .and_then(|c| c.parse().ok())
            .filter(|&c: &usize| c >= 2)
            .map(|num_classes| HeadKind::Classify { num_classes })
            .ok_or_else(|| Error::Unknown {
                what: "head",
                name: s.to_string(),
            })
    }
}

/// Model families compared throughout the lab.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Bert,
    Linear,
    FnetFft,
    FnetMatrix,
    Random,
    FfOnly,
    FnetHybrid,
    FnetSeqOnly,
    Hartley,
    Hadamard,
    Dct,
}

impl Variant {
    pub const ALL: [Variant; 11] = [
        Variant::Bert,
        Variant::Linear,
        Variant::FnetFft,
        Variant::FnetMatrix,
        Variant::Random,
        Variant::FfOnly,
        Variant::FnetHybrid,
        Variant::FnetSeqOnly,
        Variant::Hartley,
        Variant::Hadamard,
        Variant::Dct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Bert => "bert",
            Variant::Linear => "linear",
            Variant::FnetFft => "fnet_fft",
            Variant::FnetMatrix => "fnet_mat",
            Variant::Random => "random",
            Variant::FfOnly => "ff_only",
            Variant::FnetHybrid => "fnet_hybrid",
            Variant::FnetSeqOnly => "fnet_seq",
            Variant::Hartley => "hartley",
            Variant::Hadamard => "hadamard",
            Variant::Dct => "dct",
        }
    }

    /// Mixing plan for `num_layers` layers. The hybrid replaces the final two
    /// Fourier sublayers with attention.
    pub fn plan(self, num_layers: usize) -> Vec<MixingKind> {
        let uniform = |k| vec![k; num_layers];
        match self {
            Variant::Bert => uniform(MixingKind::Attention),
            Variant::Linear => uniform(MixingKind::Linear),
            Variant::FnetFft => uniform(MixingKind::FourierFft),
            Variant::FnetMatrix => uniform(MixingKind::FourierMatrix),
            Variant::Random => uniform(MixingKind::Random),
            Variant::FfOnly => uniform(MixingKind::Identity),
            Variant::FnetSeqOnly => uniform(MixingKind::FourierSeqOnly),
            Variant::Hartley => uniform(MixingKind::Hartley),
            Variant::Hadamard => uniform(MixingKind::Hadamard),
            Variant::Dct => uniform(MixingKind::Dct),
            Variant::FnetHybrid => {
                build_layout(num_layers, num_layers.min(2), Layout::Top).expect("count within range")
            }
        }
    }

    /// The single mixing kind used by a uniform variant (none for the hybrid).
    pub fn uniform_kind(self) -> Option<MixingKind> {
        match self {
            Variant::FnetHybrid => None,
            v => v.plan(1).first().copied(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "variant",
                name: s.to_string(),
            })
    }
}

/// Architecture size presets. `Sized` covers the rest of the size grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Base,
    Large,
    Tiny,
    Sized { hidden_dim: usize, num_layers: usize },
}

impl Preset {
    pub fn dims(self) -> (usize, usize) {
        match self {
            Preset::Base => (768, 12),
            Preset::Large => (1024, 24),
            Preset::Tiny => (128, 2),
            Preset::Sized { hidden_dim, num_layers } => (hidden_dim, num_layers),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    /// `base`, `large`, `tiny`, or `d<hidden>_l<layers>` such as `d512_l8`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => return Ok(Preset::Base),
            "large" => return Ok(Preset::Large),
            "tiny" => return Ok(Preset::Tiny),
            _ => {}
        }
        let parsed = s
            .strip_prefix('d')
            .and_then(|r| r.split_once("_l"))
            .and_then(|(d, l)| Some((d.parse().ok()?, l.parse().ok()?)));
        match parsed {
            Some((hidden_dim, num_layers)) if hidden_dim >= 64 && hidden_dim % 64 == 0 => {
                Ok(Preset::Sized { hidden_dim, num_layers })
            }
            _ => Err(Error::Unknown {
                what: "preset",
                name: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Base => f.write_str("base"),
            Preset::Large => f.write_str("large"),
            Preset::Tiny => f.write_str("tiny"),
            Preset::Sized { hidden_dim, num_layers } => write!(f, "d{hidden_dim}_l{num_layers}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Maximum (and mixing) sequence length `n`.
    pub seq_len: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub type_vocab_size: usize,
    pub dropout_rate: f64,
    pub layer_norm_eps: f64,
    pub use_position_embeddings: bool,
    pub mixing_plan: Vec<MixingKind>,
    pub head: HeadKind,
    pub tie_word_embeddings: bool,
    /// Enforces `ff_dim == 4·hidden_dim` and `num_heads == hidden_dim / 64`.
    pub bert_compatible: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seq_len: 64,
            hidden_dim: 64,
            ff_dim: 256,
            num_layers: 4,
            num_heads: 1,
            vocab_size: 256,
            type_vocab_size: 2,
            dropout_rate: 0.1,
            layer_norm_eps: 1e-12,
            use_position_embeddings: true,
            mixing_plan: vec![MixingKind::FourierFft; 4],
            head: HeadKind::Pretrain,
            tie_word_embeddings: true,
            bert_compatible: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Full-scale preset: vocabulary 32000, `n = 512`, `d_ff = 4·d_h`,
    /// `d_h / 64` heads.
    pub fn preset(preset: Preset, variant: Variant) -> Self {
        let (hidden_dim, num_layers) = preset.dims();
        ModelConfig {
            seq_len: 512,
            hidden_dim,
            ff_dim: 4 * hidden_dim,
            num_layers,
            num_heads: (hidden_dim / 64).max(1),
            vocab_size: 32_000,
            type_vocab_size: 2,
            dropout_rate: 0.1,
            layer_norm_eps: 1e-12,
            use_position_embeddings: true,
            mixing_plan: variant.plan(num_layers),
            head: HeadKind::Pretrain,
            tie_word_embeddings: true,
            bert_compatible: true,
            seed: 0,
        }
    }

    /// Desk-scale model: `d_ff = 4·d_h`, one head per 64 features.
    pub fn small(seq_len: usize, hidden_dim: usize, num_layers: usize, variant: Variant) -> Self {
        ModelConfig {
            seq_len,
            hidden_dim,
            ff_dim: 4 * hidden_dim,
            num_layers,
            num_heads: (hidden_dim / 64).max(1),
            mixing_plan: variant.plan(num_layers),
            ..ModelConfig::default()
        }
    }

    /// Structural checks. Transform length limits (such as power-of-two
    /// sizes for FFT mixing) are enforced when a model is built, so that
    /// presets can still be counted.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.seq_len == 0 || self.hidden_dim == 0 || self.ff_dim == 0 || self.vocab_size == 0 {
            return bad("sizes must be positive".into());
        }
        if self.type_vocab_size == 0 {
            return bad("type_vocab_size must be positive".into());
        }
        if self.mixing_plan.len() != self.num_layers {
            return bad(format!(
                "mixing plan has {} entries for {} layers",
                self.mixing_plan.len(),
                self.num_layers
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps < 0.0 {
            return bad("layer_norm_eps must be non-negative".into());
        }
        let uses_attention = self.mixing_plan.contains(&MixingKind::Attention);
        if uses_attention && (self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads)) {
            return bad(format!(
                "hidden_dim {} not divisible by {} heads",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.bert_compatible && (self.ff_dim != 4 * self.hidden_dim || self.num_heads != self.hidden_dim / 64) {
            return bad("bert-compatible configs need d_ff = 4·d_h and d_h/64 heads".into());
        }
        if let HeadKind::Classify { num_classes } = self.head {
            if num_classes < 2 {
                return bad("classifier needs at least two classes".into());
            }
        }
        Ok(())
    }

    pub fn num_attention_layers(&self) -> usize {
        self.mixing_plan.iter().filter(|k| **k == MixingKind::Attention).count()
    }

    /// Serializes as `key = value` lines; [`ModelConfig::from_kv_text`] inverts it.
    pub fn to_kv_text(&self) -> String {
        let plan: Vec<&str> = self.mixing_plan.iter().map(|k| k.name()).collect();
        let mut s = String::new();
        for (k, v) in [
            ("seq_len", self.seq_len.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("type_vocab_size", self.type_vocab_size.to_string()),
            ("dropout_rate", kv::float(self.dropout_rate)),
            ("layer_norm_eps", kv::float(self.layer_norm_eps)),
            ("use_position_embeddings", self.use_position_embeddings.to_string()),
            ("mixing_plan", plan.join(",")),
            ("head", self.head.to_string()),
            ("tie_word_embeddings", self.tie_word_embeddings.to_string()),
            ("bert_compatible", self.bert_compatible.to_string()),
            ("seed", self.seed.to_string()),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut plan_set = false;
        for entry in kv::parse(text)? {
            if !cfg.apply_entry(&entry)? {
                return Err(Error::UnknownKey(entry.key));
            }
            plan_set |= entry.key == "mixing_plan";
        }
        if !plan_set {
            cfg.mixing_plan = vec![MixingKind::FourierFft; cfg.num_layers];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one entry; returns `false` for keys this type does not own.
    pub fn apply_entry(&mut self, e: &kv::Entry) -> Result<bool> {
        match e.key.as_str() {
            "seq_len" => self.seq_len = kv::value(e)?,
            "hidden_dim" => self.hidden_dim = kv::value(e)?,
            "ff_dim" => self.ff_dim = kv::value(e)?,
            "num_layers" => self.num_layers = kv::value(e)?,
            "num_heads" => self.num_heads = kv::value(e)?,
            "vocab_size" => self.vocab_size = kv::value(e)?,
            "type_vocab_size" => self.type_vocab_size = kv::value(e)?,
            "dropout_rate" => self.dropout_rate = kv::value(e)?,
            "layer_norm_eps" => self.layer_norm_eps = kv::value(e)?,
            "use_position_embeddings" => self.use_position_embeddings = kv::bool_value(e)?,
            "mixing_plan" => {
                self.mixing_plan = e
                    .value
                    .split(',')
                    .map(|s| s.trim())
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()
                    .map_err(|err| Error::Config {
                        line: e.line,
                        msg: err.to_string(),
                    })?
            }
            "head" => {
                self.head = e.value.parse().map_err(|err: Error| Error::Config {
                    line: e.line,
                    msg: err.to_string(),
                })?
            }
            "tie_word_embeddings" => self.tie_word_embeddings = kv::bool_value(e)?,
            "bert_compatible" => self.bert_compatible = kv::bool_value(e)?,
            "seed" => self.seed = kv::value(e)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
