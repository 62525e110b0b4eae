use crate::model::{count_params, HeadKind, MixingKind, ModelConfig};

/// Bytes per stored value: the engine computes in `f64`.
pub const VALUE_BYTES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub param_bytes: usize,
    /// Activations held for the backward pass at its start.
    pub saved_bytes: usize,
    /// Largest short-lived buffer on top of the saved ones.
    pub transient_bytes: usize,
    pub total: usize,
}

/// Values a mixing sublayer keeps for backward, per example, and its
/// largest scratch buffer.
pub fn mixing_activations(kind: MixingKind, n: usize, d: usize, heads: usize) -> (usize, usize) {
    let nd = n * d;
    match kind {
        // q, k, v, context, output and the probabilities of every head;
        // backward needs one n×n gradient at a time
        MixingKind::Attention => (5 * nd + heads * n * n, n * n),
        // the complex intermediate is twice the real plane
        MixingKind::FourierFft | MixingKind::FourierMatrix | MixingKind::FourierSeqOnly => (nd, 2 * nd),
        MixingKind::Hartley | MixingKind::Hadamard | MixingKind::Dct => (nd, nd),
        MixingKind::Linear | MixingKind::Random => (2 * nd, 0),
        MixingKind::Identity => (0, 0),
    }
}

/// Analytic peak bytes of one training step on `batch` examples: parameters
/// plus everything the forward pass saves, plus the largest scratch buffer.
/// With `batch == 0` only the parameters remain.
pub fn estimate_peak_memory(cfg: &ModelConfig, batch: usize) -> MemoryEstimate {
    let (n, d, ff) = (cfg.seq_len, cfg.hidden_dim, cfg.ff_dim);
    let nd = n * d;
    let count = count_params(cfg);
    let param_bytes = (count.total + count.frozen) * VALUE_BYTES;
    // lookups, their sums, the reshape copy and the normalized output
    let tables = if cfg.use_position_embeddings { 3 } else { 2 };
    let mut saved = (2 * tables + 3) * nd;
    let mut transient = 0;
    for &kind in &cfg.mixing_plan {
        let (keep, scratch) = mixing_activations(kind, n, d, cfg.num_heads);
        saved += keep;
        transient = transient.max(scratch);
        if kind != MixingKind::Identity {
            // residual sum and the norm's output and normalized input
            saved += 3 * nd;
        }
        // two projections, the activation and its cached tanh, residual, norm
        saved += 3 * n * ff + 4 * nd;
    }
    saved += match cfg.head {
        HeadKind::Pretrain => 4 * d + 2,
        HeadKind::Classify { num_classes } => 3 * d + num_classes,
    };
    let saved_bytes = batch * saved * VALUE_BYTES;
    let transient_bytes = batch * transient * VALUE_BYTES;
    MemoryEstimate {
        param_bytes,
        saved_bytes,
        transient_bytes,
        total: param_bytes + saved_bytes + transient_bytes,
    }
}

/// Peak bytes of a lone mixing sublayer: its input, parameters, saved
/// activations and scratch.
pub fn estimate_mixing_memory(kind: MixingKind, n: usize, d: usize, heads: usize, batch: usize) -> usize {
    let params = match kind {
        MixingKind::Attention => 4 * (d * d + d),
        MixingKind::Linear | MixingKind::Random => n * n + d * d,
        MixingKind::Hartley | MixingKind::Hadamard | MixingKind::Dct => n * n + d * d,
        MixingKind::FourierMatrix => 2 * (n * n + d * d),
        _ => 0,
    };
    let (keep, scratch) = mixing_activations(kind, n, d, heads);
    (params + batch * (n * d + keep + scratch)) * VALUE_BYTES
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Preset, Variant};

    fn base(v: Variant, n: usize) -> ModelConfig {
        let mut cfg = ModelConfig::preset(Preset::Base, v);
        cfg.seq_len = n;
        cfg
    }

    #[test]
    fn zero_batch_is_parameters_only() {
        let cfg = base(Variant::Bert, 512);
        let e = estimate_peak_memory(&cfg, 0);
        assert_eq!(e.total, e.param_bytes);
        assert_eq!(e.param_bytes, count_params(&cfg).total * 8);
    }

    #[test]
    fn ordering_at_long_lengths() {
        for n in [1024, 2048, 4096] {
            let m = |v| estimate_peak_memory(&base(v, n), 8).total;
            let (f, l, a) = (m(Variant::FnetFft), m(Variant::Linear), m(Variant::Bert));
            assert!(f < l && l < a, "n={n}: {f} {l} {a}");
        }
    }

    #[test]
    fn attention_probabilities_are_counted() {
        let (saved, _) = mixing_activations(MixingKind::Attention, 128, 64, 4);
        assert_eq!(saved, 5 * 128 * 64 + 4 * 128 * 128);
        let one = estimate_mixing_memory(MixingKind::Attention, 128, 64, 4, 1);
        let two = estimate_mixing_memory(MixingKind::Attention, 128, 64, 4, 2);
        assert_eq!(
            two - one,
            one - estimate_mixing_memory(MixingKind::Attention, 128, 64, 4, 0)
        );
    }

    #[test]
    fn doubling_growth() {
        // activation-dominated regime: long sequences, a modest batch
        let grow = |v: Variant, n: usize| {
            estimate_peak_memory(&base(v, 2 * n), 8).total as f64 / estimate_peak_memory(&base(v, n), 8).total as f64
        };
        assert!(grow(Variant::Bert, 8192) >= 3.5, "{}", grow(Variant::Bert, 8192));
        assert!(grow(Variant::Bert, 512) > grow(Variant::FnetFft, 512));
        for n in [512, 1024, 4096] {
            assert!(grow(Variant::FnetFft, n) <= 2.2, "{}", grow(Variant::FnetFft, n));
        }
    }
}
