//! The `fnetlab` command: argument handling, config resolution and the
//! subcommands.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::bench::{emit_report, flops_forward, BenchRecord, Phase, SweepReport};
use crate::error::{Error, Result};
use crate::gradsuite::run_gradient_suite;
use crate::model::{count_params, save_checkpoint, Variant};
use crate::numerics::OpKind;
use crate::trainer::{train, MetricRow, TrainOptions};

pub use config::{keys_help, KeySpec, RunConfig, KEYS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// Variants listed by `flops` and `params` when none is chosen.
pub const TABLE_VARIANTS: [Variant; 6] = [
    Variant::Bert,
    Variant::Linear,
    Variant::FnetFft,
    Variant::Random,
    Variant::FfOnly,
    Variant::FnetHybrid,
];

#[derive(Parser, Debug)]
#[command(name = "fnetlab", version, about = "Encoder laboratory for Fourier token mixing", after_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write metrics.csv and model.fnt1
    #[command(after_help = keys_help())]
    Train(RunArgs),
    /// Time mixing sublayers or full models over a length grid
    #[command(after_help = keys_help())]
    Bench(RunArgs),
    /// Forward-pass FLOPs per variant
    #[command(after_help = keys_help())]
    Flops(RunArgs),
    /// Parameter counts per variant
    #[command(after_help = keys_help())]
    Params(RunArgs),
    /// Central-difference gradient checks of every layer and model kind
    Gradcheck(GradArgs),
    /// Forward and train-step timings, speed-ups and the FFT crossover
    #[command(after_help = keys_help())]
    Sweep(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// `key = value` config file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Three timed repeats per benchmark cell
    #[arg(long)]
    quick: bool,
    /// `--key value` overrides of config keys
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct GradArgs {
    /// Scales the backward rule of one primitive (harness self-test)
    #[arg(long, hide = true, value_name = "OP")]
    corrupt: Option<String>,
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: e.to_string(),
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    }
}

/// Resolves defaults, the config file and the overrides, in that order.
fn resolve(args: &RunArgs) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    let mut it = args.overrides.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(usage(format!("expected `--key value`, found `{arg}`")));
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k, v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| usage(format!("missing value for --{key}")))?;
                (key, v.clone())
            }
        };
        cfg.set(key, &value).map_err(usage)?;
    }
    if args.quick {
        cfg.set("repeats", "3").map_err(usage)?;
    }
    Ok(cfg)
}

/// `FNETLAB_THREADS`, default 1.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("FNETLAB_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::InvalidArgument(format!(
                "FNETLAB_THREADS must be a positive integer, got `{s}`"
            ))),
        },
    }
}

fn create_dir(dir: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime(Error::io(dir, e)))
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> std::result::Result<(), Failure> {
    let path = dir.join("config.txt");
    fs::write(&path, cfg.to_text()).map_err(|e| runtime(Error::io(&path, e)))
}

/// A fresh `<prefix>-<unix seconds>` directory under `root`.
fn stamped_dir(root: &Path, prefix: &str) -> std::result::Result<PathBuf, Failure> {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut dir = root.join(format!("{prefix}-{secs}"));
    let mut i = 1;
    while dir.exists() {
        dir = root.join(format!("{prefix}-{secs}-{i}"));
        i += 1;
    }
    create_dir(&dir)?;
    Ok(dir)
}

/// Runs the command line; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, threads),
        Command::Bench(a) => cmd_bench(a, threads, false),
        Command::Sweep(a) => cmd_bench(a, threads, true),
        Command::Flops(a) => cmd_flops(a),
        Command::Params(a) => cmd_params(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn cmd_train(args: &RunArgs, threads: usize) -> std::result::Result<i32, Failure> {
    let cfg = resolve(args)?;
    let model_cfg = cfg.model_config().map_err(usage)?;
    let train_cfg = cfg.train_config().map_err(usage)?;
    let task = cfg.task().map_err(usage)?;
    let out: PathBuf = cfg.get::<String>("out_dir").map_err(usage)?.into();
    create_dir(&out)?;
    echo_config(&cfg, &out)?;
    let opts = TrainOptions {
        on_log: Some(Box::new(|r: &MetricRow| eprintln!("{r}"))),
        checkpoint_dir: (train_cfg.checkpoint_every > 0).then(|| out.clone()),
        threads,
    };
    let outcome = train(&model_cfg, &train_cfg, &task, opts).map_err(runtime)?;
    let metrics = out.join("metrics.csv");
    let file = fs::File::create(&metrics).map_err(|e| runtime(Error::io(&metrics, e)))?;
    outcome.log.write_csv(file).map_err(runtime)?;
    let ckpt = out.join("model.fnt1");
    save_checkpoint(&outcome.model, &ckpt).map_err(runtime)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "{} on {}: step {} loss {:.4} accuracy {:.4}",
            cfg.raw("variant"),
            task.name(),
            last.step,
            last.total_loss,
            last.task_acc
        );
    }
    println!("wrote {} and {}", metrics.display(), ckpt.display());
    Ok(EXIT_OK)
}

fn print_record(r: &BenchRecord) {
    let ms = r.median_ms.map_or("-".to_string(), |m| format!("{m:.3}"));
    eprintln!(
        "{:<16} n={:<6} {:<15} {:>12} ms  {}",
        r.variant,
        r.n,
        r.phase.name(),
        ms,
        r.status.name()
    );
}

fn cmd_bench(args: &RunArgs, threads: usize, sweep: bool) -> std::result::Result<i32, Failure> {
    let cfg = resolve(args)?;
    let (phases, prefix): (&[Phase], &str) = if sweep {
        (&[Phase::FullForward, Phase::TrainStep], "sweep")
    } else {
        (&[Phase::MixingForwardBackward], "bench")
    };
    let mut sc = cfg.sweep_config(phases, sweep).map_err(usage)?;
    sc.threads = threads;
    let root: PathBuf = cfg.get::<String>("out_dir").map_err(usage)?.into();
    let dir = stamped_dir(&root, prefix)?;
    echo_config(&cfg, &dir)?;
    let report = crate::bench::sweep_sequence_lengths(&sc, print_record).map_err(runtime)?;
    let files = emit_report(&report.records, &dir, prefix).map_err(runtime)?;
    if sweep {
        write_sweep_extras(&report, &dir)?;
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(EXIT_OK)
}

fn write_sweep_extras(report: &SweepReport, dir: &Path) -> std::result::Result<(), Failure> {
    let mut s = String::from("variant,n,phase,speedup_vs_bert\n");
    for sp in &report.speedups {
        s.push_str(&format!(
            "{},{},{},{:.4}\n",
            sp.variant,
            sp.n,
            sp.phase.name(),
            sp.multiplier
        ));
    }
    let path = dir.join("speedups.csv");
    fs::write(&path, s).map_err(|e| runtime(Error::io(&path, e)))?;
    let line = match report.crossover {
        Some(n) => format!("fft faster than matrix dft from n = {n}\n"),
        None => "fft never consistently faster than matrix dft on this grid\n".to_string(),
    };
    print!("{line}");
    let path = dir.join("crossover.txt");
    fs::write(&path, line).map_err(|e| runtime(Error::io(&path, e)))
}

fn chosen_variants(cfg: &RunConfig) -> std::result::Result<Vec<Variant>, Failure> {
    if cfg.is_set("variant") {
        Ok(vec![cfg.variant().map_err(usage)?])
    } else {
        Ok(TABLE_VARIANTS.to_vec())
    }
}

fn write_table(cfg: &RunConfig, name: &str, csv: &str) -> std::result::Result<(), Failure> {
    let out: PathBuf = cfg.get::<String>("out_dir").map_err(usage)?.into();
    create_dir(&out)?;
    echo_config(cfg, &out)?;
    let path = out.join(name);
    fs::write(&path, csv).map_err(|e| runtime(Error::io(&path, e)))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_flops(args: &RunArgs) -> std::result::Result<i32, Failure> {
    let cfg = resolve(args)?;
    let conv = cfg.flop_convention().map_err(usage)?;
    let mut csv = String::from("variant,embeddings,mixing,feed_forward,layer_norms,pooler,heads,total\n");
    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "variant", "embed", "mixing", "ff", "norms", "pooler", "heads", "GFLOPs"
    );
    for v in chosen_variants(&cfg)? {
        let mc = cfg.model_config_for(v).map_err(usage)?;
        let b = flops_forward(&mc, &conv).map_err(usage)?;
        let g: Vec<f64> = b.components().iter().map(|c| c.1 / 1e9).collect();
        println!(
            "{:<12} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.2}",
            v.name(),
            g[0],
            g[1],
            g[2],
            g[3],
            g[4],
            g[5],
            b.total / 1e9
        );
        let cols: Vec<String> = b.components().iter().map(|c| format!("{}", c.1)).collect();
        csv.push_str(&format!("{},{},{}\n", v.name(), cols.join(","), b.total));
    }
    write_table(&cfg, "flops.csv", &csv)?;
    Ok(EXIT_OK)
}

fn cmd_params(args: &RunArgs) -> std::result::Result<i32, Failure> {
    let cfg = resolve(args)?;
    let mut csv = String::from("variant,embeddings,mixing,feed_forward,layer_norms,pooler,heads,frozen,total\n");
    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "variant", "embed", "mixing", "ff", "norms", "pooler", "heads", "frozen", "M params"
    );
    for v in chosen_variants(&cfg)? {
        let c = count_params(&cfg.model_config_for(v).map_err(usage)?);
        let cols = [
            c.embeddings,
            c.mixing,
            c.feed_forward,
            c.layer_norms,
            c.pooler,
            c.heads,
            c.frozen,
        ];
        let m: Vec<String> = cols.iter().map(|x| format!("{:>10.3}", *x as f64 / 1e6)).collect();
        println!("{:<12} {} {:>10.2}", v.name(), m.join(" "), c.total as f64 / 1e6);
        let raw: Vec<String> = cols.iter().map(|x| x.to_string()).collect();
        csv.push_str(&format!("{},{},{}\n", v.name(), raw.join(","), c.total));
    }
    write_table(&cfg, "params.csv", &csv)?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(args: &GradArgs) -> std::result::Result<i32, Failure> {
    let corrupt = match &args.corrupt {
        None => None,
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| usage(format!("unknown op `{name}`")))?),
    };
    let results = run_gradient_suite(corrupt, |r| {
        let mark = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<24} {:.3e}  {mark}", r.component, r.max_rel_error);
    })
    .map_err(runtime)?;
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.component.as_str())
        .collect();
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        return Ok(EXIT_OK);
    }
    // the primitive checks isolate the faulty rule
    let ops: Vec<&str> = failed.iter().filter_map(|c| c.strip_prefix("op:")).collect();
    eprintln!(
        "gradient check failed for {} components: {}",
        failed.len(),
        failed.join(", ")
    );
    if !ops.is_empty() {
        eprintln!("faulty backward rule: {}", ops.join(", "));
    }
    Ok(EXIT_CHECK)
}
