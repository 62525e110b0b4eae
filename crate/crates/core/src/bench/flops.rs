use crate::error::Result;
use crate::model::{HeadKind, MixingKind, ModelConfig};

/// How analytic operation counts are turned into FLOPs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlopConvention {
    /// FLOPs per multiply-accumulate.
    pub mac_to_flop: f64,
    /// Count the `d_h × V` vocabulary projection of the MLM head at every
    /// position. Off by default: the reference totals leave it out.
    pub include_output_projection: bool,
}

impl Default for FlopConvention {
    fn default() -> Self {
        FlopConvention {
            mac_to_flop: 2.0,
            include_output_projection: false,
        }
    }
}

/// Forward-pass FLOPs for one example, by component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlopBreakdown {
    pub embeddings: f64,
    pub mixing: f64,
    pub feed_forward: f64,
    pub layer_norms: f64,
    pub pooler: f64,
    pub heads: f64,
    pub total: f64,
}

impl FlopBreakdown {
    pub fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("embeddings", self.embeddings),
            ("mixing", self.mixing),
            ("feed_forward", self.feed_forward),
            ("layer_norms", self.layer_norms),
            ("pooler", self.pooler),
            ("heads", self.heads),
        ]
    }
}

/// Multiply-accumulates of one mixing sublayer on an `n × d_h` block.
///
/// Attention `2n²d + 4nd²`; dense token mixing `n²d + nd²`; FFT mixing
/// `nd·log₂n + nd·log₂d`; no mixing 0. The real transforms are applied as
/// dense matrices here, so they cost the same as linear mixing.
pub fn mixing_macs(kind: MixingKind, n: usize, d: usize) -> f64 {
    let (n, d) = (n as f64, d as f64);
    match kind {
        MixingKind::Attention => 2.0 * n * n * d + 4.0 * n * d * d,
        MixingKind::Linear
        | MixingKind::Random
        | MixingKind::FourierMatrix
        | MixingKind::Hartley
        | MixingKind::Hadamard
        | MixingKind::Dct => n * n * d + n * d * d,
        MixingKind::FourierFft => n * d * n.log2() + n * d * d.log2(),
        MixingKind::FourierSeqOnly if (n as usize).is_power_of_two() => n * d * n.log2(),
        MixingKind::FourierSeqOnly => n * n * d,
        MixingKind::Identity => 0.0,
    }
}

/// Analytic forward FLOPs for a single example of length `cfg.seq_len`.
pub fn flops_forward(cfg: &ModelConfig, conv: &FlopConvention) -> Result<FlopBreakdown> {
    cfg.validate()?;
    let (n, d, ff) = (cfg.seq_len as f64, cfg.hidden_dim as f64, cfg.ff_dim as f64);
    // a layer norm is about four passes over its input
    let norm = 4.0 * n * d;
    let tables = if cfg.use_position_embeddings { 3.0 } else { 2.0 };
    let mut m = FlopBreakdown {
        embeddings: (tables - 1.0) * n * d,
        layer_norms: norm,
        pooler: d * d,
        ..FlopBreakdown::default()
    };
    for &kind in &cfg.mixing_plan {
        m.mixing += mixing_macs(kind, cfg.seq_len, cfg.hidden_dim);
        if kind != MixingKind::Identity {
            m.layer_norms += norm;
        }
        m.feed_forward += 2.0 * n * d * ff;
        m.layer_norms += norm;
    }
    m.heads = match cfg.head {
        HeadKind::Pretrain => {
            let projection = if conv.include_output_projection {
                n * (d * d + 4.0 * d + d * cfg.vocab_size as f64)
            } else {
                0.0
            };
            2.0 * d + projection
        }
        HeadKind::Classify { num_classes } => d * num_classes as f64,
    };
    let s = conv.mac_to_flop;
    for v in [
        &mut m.embeddings,
        &mut m.mixing,
        &mut m.feed_forward,
        &mut m.layer_norms,
        &mut m.pooler,
        &mut m.heads,
    ] {
        *v *= s;
    }
    m.total = m.embeddings + m.mixing + m.feed_forward + m.layer_norms + m.pooler + m.heads;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Preset, Variant};

    fn gflops(v: Variant) -> f64 {
        flops_forward(&ModelConfig::preset(Preset::Base, v), &FlopConvention::default())
            .unwrap()
            .total
            / 1e9
    }

    #[test]
    fn fft_term_at_base_dims() {
        let direct = 512.0 * 768.0 * 9.0 + 512.0 * 768.0 * 768f64.log2();
        assert_eq!(mixing_macs(MixingKind::FourierFft, 512, 768), direct);
        assert!((direct / 1e6 - 7.3).abs() < 0.05);
    }

    #[test]
    fn base_totals_against_independent_sums() {
        // per layer: mixing MACs + 2·n·d·d_ff MACs, twelve layers, ×2
        let (n, d, ff) = (512.0, 768.0, 3072.0);
        let ffw = 2.0 * n * d * ff;
        let core = |mix: f64| 2.0 * 12.0 * (mix + ffw) / 1e9;
        let cases = [
            (Variant::Bert, core(2.0 * n * n * d + 4.0 * n * d * d)),
            (Variant::Linear, core(n * n * d + n * d * d)),
            (Variant::FnetFft, core(n * d * (n.log2() + d.log2()))),
            (Variant::FfOnly, core(0.0)),
        ];
        for (v, expected) in cases {
            let got = gflops(v);
            // the remainder is norms, embeddings and the pooler
            assert!(got > expected && got - expected < 0.3, "{v}: {got} vs {expected}");
        }
    }

    #[test]
    fn breakdown_sums_and_is_pure() {
        let cfg = ModelConfig::preset(Preset::Base, Variant::FnetHybrid);
        let a = flops_forward(&cfg, &FlopConvention::default()).unwrap();
        let b = flops_forward(&cfg, &FlopConvention::default()).unwrap();
        assert_eq!(a, b);
        let sum: f64 = a.components().iter().map(|(_, v)| v).sum();
        assert!((sum - a.total).abs() < 1e-6 * a.total);
    }

    #[test]
    fn output_projection_and_factor_are_configurable() {
        let cfg = ModelConfig::preset(Preset::Base, Variant::Bert);
        let base = flops_forward(&cfg, &FlopConvention::default()).unwrap();
        let with = flops_forward(
            &cfg,
            &FlopConvention {
                include_output_projection: true,
                ..FlopConvention::default()
            },
        )
        .unwrap();
        assert!(with.heads - base.heads > 2.0 * 512.0 * 768.0 * 32000.0 * 0.99);
        let macs = flops_forward(
            &cfg,
            &FlopConvention {
                mac_to_flop: 1.0,
                ..FlopConvention::default()
            },
        )
        .unwrap();
        assert!((base.total - 2.0 * macs.total).abs() < 1.0);
    }

    #[test]
    fn every_kind_positive_except_identity() {
        for kind in MixingKind::ALL {
            let c = mixing_macs(kind, 64, 32);
            assert_eq!(c == 0.0, kind == MixingKind::Identity, "{kind}");
        }
        let cfg = ModelConfig::small(8, 16, 0, Variant::FnetFft);
        assert!(flops_forward(&cfg, &FlopConvention::default()).unwrap().total > 0.0);
    }
}
