use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderInput, HeadKind, MixingKind, Model, ModelConfig, Variant};
use crate::numerics::{rng_from_seed, Mode, Tape, Tensor};
use crate::trainer::{adam_step, AdamConfig, AdamState};

use super::flops::{flops_forward, mixing_macs, FlopConvention};
use super::memory::{estimate_mixing_memory, estimate_peak_memory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "mixing_fwd")]
    MixingForward,
    #[serde(rename = "mixing_fwd_bwd")]
    MixingForwardBackward,
    #[serde(rename = "forward")]
    FullForward,
    #[serde(rename = "train_step")]
    TrainStep,
    #[serde(rename = "inference")]
    Inference,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::MixingForward,
        Phase::MixingForwardBackward,
        Phase::FullForward,
        Phase::TrainStep,
        Phase::Inference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::MixingForward => "mixing_fwd",
            Phase::MixingForwardBackward => "mixing_fwd_bwd",
            Phase::FullForward => "forward",
            Phase::TrainStep => "train_step",
            Phase::Inference => "inference",
        }
    }

    pub fn is_mixing_only(self) -> bool {
        matches!(self, Phase::MixingForward | Phase::MixingForwardBackward)
    }

    fn has_backward(self) -> bool {
        matches!(self, Phase::MixingForwardBackward | Phase::TrainStep)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "phase",
                name: s.into(),
            })
    }
}

/// Outcome of one benchmark cell. Failures are rows, not crashes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "ok")]
    Ok,
    #[serde(rename = "unsupported_length")]
    UnsupportedLength,
    /// The estimated footprint exceeds the configured memory budget.
    #[serde(rename = "oom")]
    OutOfMemory,
    #[serde(rename = "failed")]
    Failed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::UnsupportedLength => "unsupported_length",
            Status::OutOfMemory => "oom",
            Status::Failed => "failed",
        }
    }
}

/// One timed cell. `flops` counts the whole timed region (forward FLOPs ×
/// batch, tripled when a backward pass is included); `peak_bytes` is the
/// analytic estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub variant: String,
    pub n: usize,
    pub d_h: usize,
    pub layers: usize,
    pub batch: usize,
    pub phase: Phase,
    pub median_ms: Option<f64>,
    pub steps_per_s: Option<f64>,
    pub flops: f64,
    pub peak_bytes: usize,
    pub repeats: usize,
    pub status: Status,
}

impl BenchRecord {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub warmup: usize,
    pub repeats: usize,
    /// Cells whose estimated footprint exceeds this are recorded as `oom`.
    pub memory_budget: usize,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            warmup: 2,
            repeats: 5,
            memory_budget: 4 << 30,
        }
    }
}

impl Timing {
    /// Fewer repeats for smoke runs.
    pub fn quick() -> Self {
        Timing {
            repeats: 3,
            ..Timing::default()
        }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Runs `setup` untimed before every repeat and times `run` on its result.
/// Warmup repeats are discarded. Returns the timed milliseconds.
pub fn measure<S>(
    timing: &Timing,
    mut setup: impl FnMut() -> Result<S>,
    mut run: impl FnMut(S) -> Result<()>,
) -> Result<Vec<f64>> {
    if timing.repeats == 0 {
        return Err(Error::InvalidArgument("timing needs at least one repeat".into()));
    }
    let mut out = Vec::with_capacity(timing.repeats);
    for i in 0..timing.warmup + timing.repeats {
        let state = setup()?;
        let start = Instant::now();
        run(state)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if i >= timing.warmup {
            out.push(ms);
        }
    }
    Ok(out)
}

fn random_tensor(dims: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::from_fn(dims, |_| StandardNormal.sample(&mut rng))
}

fn status_of(e: &Error) -> Status {
    match e {
        Error::UnsupportedLength { .. } => Status::UnsupportedLength,
        _ => Status::Failed,
    }
}

struct Cell {
    variant: String,
    n: usize,
    d_h: usize,
    layers: usize,
    batch: usize,
    phase: Phase,
    flops: f64,
    peak_bytes: usize,
}

impl Cell {
    fn record(self, times: std::result::Result<Vec<f64>, Status>) -> BenchRecord {
        let (median_ms, repeats, status) = match times {
            Ok(t) => (median(&t).map(|m| m.max(1e-6)), t.len(), Status::Ok),
            Err(s) => (None, 0, s),
        };
        BenchRecord {
            variant: self.variant,
            n: self.n,
            d_h: self.d_h,
            layers: self.layers,
            batch: self.batch,
            phase: self.phase,
            median_ms,
            steps_per_s: median_ms.map(|m| 1e3 / m),
            flops: self.flops,
            peak_bytes: self.peak_bytes,
            repeats,
            status,
        }
    }
}

fn backward_factor(phase: Phase) -> f64 {
    if phase.has_backward() {
        3.0
    } else {
        1.0
    }
}

/// Times one mixing sublayer alone on `[batch, n, d_h]` inputs, with every
/// other sublayer removed and dropout off.
#[allow(clippy::too_many_arguments)]
pub fn time_mixing_sublayer(
    kind: MixingKind,
    n: usize,
    d: usize,
    heads: usize,
    batch: usize,
    backward: bool,
    timing: &Timing,
    threads: usize,
) -> BenchRecord {
    let phase = if backward {
        Phase::MixingForwardBackward
    } else {
        Phase::MixingForward
    };
    let peak_bytes = estimate_mixing_memory(kind, n, d, heads, batch);
    let cell = Cell {
        variant: kind.name().to_string(),
        n,
        d_h: d,
        layers: 1,
        batch,
        phase,
        flops: 2.0 * mixing_macs(kind, n, d) * batch as f64 * backward_factor(phase),
        peak_bytes,
    };
    if peak_bytes > timing.memory_budget {
        return cell.record(Err(Status::OutOfMemory));
    }
    let mut cfg = ModelConfig {
        seq_len: n,
        hidden_dim: d,
        ff_dim: 1,
        num_layers: 1,
        num_heads: heads,
        vocab_size: crate::tasks::NUM_RESERVED,
        dropout_rate: 0.0,
        mixing_plan: vec![kind],
        ..ModelConfig::default()
    };
    cfg.head = HeadKind::Classify { num_classes: 2 };
    let run = || -> Result<Vec<f64>> {
        let model = Model::new(cfg.clone())?.with_threads(threads)?;
        let x = random_tensor(&[batch, n, d], 1);
        let g = random_tensor(&[batch, n, d], 2);
        let mut rng = rng_from_seed(0);
        measure(
            timing,
            || {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape);
                let xv = tape.param(x.clone());
                Ok((tape, bound, xv))
            },
            |(mut tape, bound, xv)| {
                let y = model.mix(&mut tape, &bound, 0, xv, Mode::Eval, &mut rng)?;
                if backward {
                    let gv = tape.constant(g.clone());
                    let p = tape.mul(y, gv)?;
                    let s = tape.sum(p)?;
                    tape.backward(s)?;
                }
                Ok(())
            },
        )
    };
    cell.record(run().map_err(|e| status_of(&e)))
}

/// Model configuration used for whole-model timing cells.
pub fn bench_model_config(variant: Variant, n: usize, d: usize, layers: usize) -> ModelConfig {
    let mut cfg = ModelConfig::small(n, d, layers, variant);
    cfg.dropout_rate = 0.0;
    cfg.vocab_size = 256;
    cfg.head = HeadKind::Classify { num_classes: 2 };
    cfg
}

/// Times the whole model: a forward pass on the tape, a training step
/// (forward, backward and an Adam update), or tape-free inference.
pub fn time_model(
    cfg: &ModelConfig,
    label: &str,
    batch: usize,
    phase: Phase,
    timing: &Timing,
    threads: usize,
) -> BenchRecord {
    let (n, d) = (cfg.seq_len, cfg.hidden_dim);
    let flops = flops_forward(cfg, &FlopConvention::default())
        .map(|f| f.total)
        .unwrap_or(0.0)
        * batch as f64
        * backward_factor(phase);
    let peak_bytes = estimate_peak_memory(cfg, batch).total;
    let cell = Cell {
        variant: label.to_string(),
        n,
        d_h: d,
        layers: cfg.num_layers,
        batch,
        phase,
        flops,
        peak_bytes,
    };
    if phase.is_mixing_only() {
        return cell.record(Err(Status::Failed));
    }
    if peak_bytes > timing.memory_budget {
        return cell.record(Err(Status::OutOfMemory));
    }
    let run = || -> Result<Vec<f64>> {
        let mut model = Model::new(cfg.clone())?.with_threads(threads)?;
        let mut rng = rng_from_seed(3);
        let ids: Vec<usize> = {
            use rand::Rng as _;
            (0..batch * n).map(|_| rng.gen_range(0..cfg.vocab_size)).collect()
        };
        let input = EncoderInput::new(ids, vec![0; batch * n], batch, n)?;
        let labels: Vec<usize> = (0..batch).map(|b| b % 2).collect();
        let mut state = AdamState::new(model.params());
        let adam = AdamConfig::default();
        match phase {
            Phase::Inference => measure(timing, || Ok(()), |_| model.encode(&input).map(|_| ())),
            Phase::FullForward => measure(
                timing,
                || Ok(()),
                |_| {
                    let mut tape = Tape::new();
                    let b = model.bind(&mut tape);
                    let out = model.forward(&mut tape, &b, &input, Mode::Train, &mut rng)?;
                    model.classify(&mut tape, &b, out)?;
                    Ok(())
                },
            ),
            _ => measure(
                timing,
                || Ok(()),
                |_| {
                    let mut tape = Tape::new();
                    let b = model.bind(&mut tape);
                    let out = model.forward(&mut tape, &b, &input, Mode::Train, &mut rng)?;
                    let logits = model.classify(&mut tape, &b, out)?;
                    let loss = tape.cross_entropy(logits, &labels)?;
                    let mut grads = tape.backward(loss)?;
                    let g: Vec<Option<Tensor>> = b.vars().iter().map(|&v| grads.take(v)).collect();
                    adam_step(model.params_mut(), &g, &mut state, 1e-4, &adam)
                },
            ),
        }
    };
    cell.record(run().map_err(|e| status_of(&e)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub variants: Vec<Variant>,
    pub lengths: Vec<usize>,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub batch: usize,
    pub phases: Vec<Phase>,
    pub timing: Timing,
    /// Also time the cached-matrix Fourier path to locate the FFT crossover.
    pub crossover: bool,
    /// Workers for the Fourier row transforms; 1 keeps timings serial.
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            variants: vec![Variant::Bert, Variant::Linear, Variant::FnetFft],
            lengths: vec![128, 256, 512, 1024, 2048, 4096, 8192],
            hidden_dim: 64,
            num_layers: 2,
            batch: 1,
            phases: vec![Phase::TrainStep],
            timing: Timing::default(),
            crossover: false,
            threads: 1,
        }
    }
}

/// Time ratio of the attention variant to another variant in one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Speedup {
    pub variant: String,
    pub n: usize,
    pub phase: Phase,
    pub multiplier: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub records: Vec<BenchRecord>,
    pub speedups: Vec<Speedup>,
    /// Smallest length from which the FFT path stays faster than the
    /// cached-matrix path, when measured.
    pub crossover: Option<usize>,
}

impl SweepReport {
    pub fn find(&self, variant: &str, n: usize, phase: Phase) -> Option<&BenchRecord> {
        self.records
            .iter()
            .find(|r| r.variant == variant && r.n == n && r.phase == phase)
    }

    /// `t(2n) / t(n)` for each measured doubling of `variant` in `phase`.
    pub fn doubling_ratios(&self, variant: &str, phase: Phase) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for r in self.records.iter().filter(|r| r.variant == variant && r.phase == phase) {
            if let (Some(a), Some(b)) = (
                r.median_ms,
                self.find(variant, 2 * r.n, phase).and_then(|x| x.median_ms),
            ) {
                out.push((r.n, b / a));
            }
        }
        out.sort_by_key(|p| p.0);
        out
    }
}

fn label(name: &str, threads: usize) -> String {
    if threads > 1 {
        format!("{name}+t{threads}")
    } else {
        name.to_string()
    }
}

/// Times every (variant, length, phase) cell, computes speed-up multipliers
/// against the attention variant and, if asked, the FFT-vs-matrix crossover.
pub fn sweep_sequence_lengths(cfg: &SweepConfig, mut progress: impl FnMut(&BenchRecord)) -> Result<SweepReport> {
    if cfg.variants.is_empty() || cfg.lengths.is_empty() || cfg.phases.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let heads = (cfg.hidden_dim / 64).max(1);
    let mut report = SweepReport::default();
    let mut push = |r: BenchRecord, report: &mut SweepReport| {
        progress(&r);
        report.records.push(r);
    };
    for &n in &cfg.lengths {
        for &variant in &cfg.variants {
            for &phase in &cfg.phases {
                let mut r = if phase.is_mixing_only() {
                    let Some(kind) = variant.uniform_kind() else { continue };
                    let mut r = time_mixing_sublayer(
                        kind,
                        n,
                        cfg.hidden_dim,
                        heads,
                        cfg.batch,
                        phase == Phase::MixingForwardBackward,
                        &cfg.timing,
                        cfg.threads,
                    );
                    r.variant = variant.name().to_string();
                    r
                } else {
                    let mc = bench_model_config(variant, n, cfg.hidden_dim, cfg.num_layers);
                    time_model(&mc, variant.name(), cfg.batch, phase, &cfg.timing, cfg.threads)
                };
                r.variant = label(&r.variant, cfg.threads);
                push(r, &mut report);
            }
        }
        if cfg.crossover {
            for kind in [MixingKind::FourierFft, MixingKind::FourierMatrix] {
                let mut r = time_mixing_sublayer(
                    kind,
                    n,
                    cfg.hidden_dim,
                    heads,
                    cfg.batch,
                    true,
                    &cfg.timing,
                    cfg.threads,
                );
                r.variant = label(&r.variant, cfg.threads);
                push(r, &mut report);
            }
        }
    }
    let attention = label(Variant::Bert.name(), cfg.threads);
    for r in &report.records {
        if r.variant == attention || !r.is_ok() {
            continue;
        }
        if let (Some(base), Some(t)) = (
            report.find(&attention, r.n, r.phase).and_then(|b| b.median_ms),
            r.median_ms,
        ) {
            report.speedups.push(Speedup {
                variant: r.variant.clone(),
                n: r.n,
                phase: r.phase,
                multiplier: base / t,
            });
        }
    }
    if cfg.crossover {
        let fft = label(MixingKind::FourierFft.name(), cfg.threads);
        let mat = label(MixingKind::FourierMatrix.name(), cfg.threads);
        let phase = Phase::MixingForwardBackward;
        let mut lengths = cfg.lengths.clone();
        lengths.sort_unstable();
        let faster: Vec<(usize, bool)> = lengths
            .iter()
            .filter_map(|&n| {
                let a = report.find(&fft, n, phase)?.median_ms?;
                let b = report.find(&mat, n, phase)?.median_ms?;
                Some((n, a < b))
            })
            .collect();
        report.crossover = faster
            .iter()
            .enumerate()
            .find(|(i, _)| faster[*i..].iter().all(|p| p.1))
            .map(|(_, p)| p.0);
    }
    Ok(report)
}
