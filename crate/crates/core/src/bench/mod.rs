//! Timing, FLOP accounting and memory estimation.

pub mod alloc;
mod flops;
mod memory;
mod report;
mod timing;

pub use flops::{flops_forward, mixing_macs, FlopBreakdown, FlopConvention};
pub use memory::{estimate_mixing_memory, estimate_peak_memory, mixing_activations, MemoryEstimate, VALUE_BYTES};
pub use report::{emit_report, read_records_csv, write_records_csv, CSV_HEADER};
pub use timing::{
    bench_model_config, measure, median, sweep_sequence_lengths, time_mixing_sublayer, time_model, BenchRecord, Phase,
    Speedup, Status, SweepConfig, SweepReport, Timing,
};
