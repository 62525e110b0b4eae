use super::config::{HeadKind, MixingKind, ModelConfig};

/// Learnable parameter counts by component. Frozen tensors are reported
/// separately and excluded from `total`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub embeddings: usize,
    pub mixing: usize,
    pub feed_forward: usize,
    pub layer_norms: usize,
    pub pooler: usize,
    pub heads: usize,
    pub frozen: usize,
    pub total: usize,
}

/// Analytic count for `cfg`, without building any tensors.
pub fn count_params(cfg: &ModelConfig) -> ParamCount {
    let (n, d, ff, v) = (cfg.seq_len, cfg.hidden_dim, cfg.ff_dim, cfg.vocab_size);
    let norm = 2 * d;
    let mut c = ParamCount {
        embeddings: v * d + cfg.type_vocab_size * d + norm + if cfg.use_position_embeddings { n * d } else { 0 },
        pooler: d * d + d,
        ..ParamCount::default()
    };
    for kind in &cfg.mixing_plan {
        match kind {
            MixingKind::Attention => c.mixing += 4 * (d * d + d),
            MixingKind::Linear => c.mixing += n * n + d * d,
            MixingKind::Random => c.frozen += n * n + d * d,
            _ => {}
        }
        if *kind != MixingKind::Identity {
            c.layer_norms += norm;
        }
        c.feed_forward += d * ff + ff + ff * d + d;
        c.layer_norms += norm;
    }
    c.heads = match cfg.head {
        HeadKind::Pretrain => {
            let decoder = if cfg.tie_word_embeddings { 0 } else { d * v };
            d * d + d + norm + decoder + v + 2 * d + 2
        }
        HeadKind::Classify { num_classes } => d * num_classes + num_classes,
    };
    c.total = c.embeddings + c.mixing + c.feed_forward + c.layer_norms + c.pooler + c.heads;
    c
}
