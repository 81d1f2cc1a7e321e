//! `crcal`: command-line orchestrator for cross-resonance gate calibration
//! campaigns, interleaved benchmarking, gate synthesis tables, and report
//! consolidation against the built-in virtual device.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when a
//! calibration fails its verification quality gate.

mod commands;
mod output;

use clap::{Args, Parser, Subcommand};

const DEFAULT_THETA: f64 = std::f64::consts::PI / 5.0;

#[derive(Parser)]
#[command(
    name = "crcal",
    version,
    about = "Pulse-level CR(theta) calibration, gate synthesis, and interleaved benchmarking on a virtual two-qubit device",
    after_help = "Environment overrides use the CRCAL_ prefix (CRCAL_DEVICE, CRCAL_SEED, \
                  CRCAL_SHOTS, CRCAL_OUTPUT, CRCAL_THETA, CRCAL_GATES, CRCAL_THREADS, CRCAL_FORMAT)."
)]
struct Cli {
    /// Cap on worker threads (0 keeps the library default).
    #[arg(long, global = true, env = "CRCAL_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full CR(theta) calibration pipeline and persist the gate.
    Calibrate(CalibrateArgs),
    /// Run interleaved randomized benchmarking for a calibrated gate.
    Benchmark(BenchmarkArgs),
    /// Print the single-qubit wrapper table for all nine AB(theta) gates.
    Synthesize(SynthesizeArgs),
    /// Consolidate calibration and benchmark outputs into one report.
    Report(ReportArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Device config JSON.
    #[arg(long, env = "CRCAL_DEVICE", default_value = "device_default.json")]
    device: std::path::PathBuf,
    /// Target rotation angle theta in radians.
    #[arg(long, env = "CRCAL_THETA", default_value_t = DEFAULT_THETA)]
    theta: f64,
    /// Master seed for all experiments.
    #[arg(long, env = "CRCAL_SEED", default_value_t = 7)]
    seed: u64,
    /// Shots per measurement cell.
    #[arg(long, env = "CRCAL_SHOTS", default_value_t = 20_000)]
    shots: u64,
    /// Output directory.
    #[arg(long, env = "CRCAL_OUTPUT", default_value = "crcal_out")]
    output: std::path::PathBuf,
    /// Skip the inverse-gate verification experiment.
    #[arg(long)]
    skip_inverse: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Device config JSON.
    #[arg(long, env = "CRCAL_DEVICE", default_value = "device_default.json")]
    device: std::path::PathBuf,
    /// Calibrated gate JSON produced by `calibrate`.
    #[arg(long, env = "CRCAL_GATE")]
    gate: Option<std::path::PathBuf>,
    /// Master seed.
    #[arg(long, env = "CRCAL_SEED", default_value_t = 7)]
    seed: u64,
    /// Shots per sequence.
    #[arg(long, env = "CRCAL_SHOTS", default_value_t = 20_000)]
    shots: u64,
    /// Output directory.
    #[arg(long, env = "CRCAL_OUTPUT", default_value = "crcal_out")]
    output: std::path::PathBuf,
    /// Gates to benchmark.
    #[arg(
        long,
        env = "CRCAL_GATES",
        value_delimiter = ',',
        default_values_t = ["ZX".to_string(), "ZY".to_string(), "ZZ".to_string(), "XY".to_string(), "XX".to_string(), "YY".to_string()]
    )]
    gates: Vec<String>,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Rotation angle theta used for the dumped unitaries.
    #[arg(long, env = "CRCAL_THETA", default_value_t = DEFAULT_THETA)]
    theta: f64,
    /// Write the nine gate unitaries as JSON (row-major re/im pairs).
    #[arg(long)]
    dump_unitaries: Option<std::path::PathBuf>,
    /// Write the echoed CR pulse schedule as JSON.
    #[arg(long)]
    dump_schedule: Option<std::path::PathBuf>,
    /// Calibrated gate JSON; its schedule is used for --dump-schedule.
    #[arg(long, env = "CRCAL_GATE")]
    gate: Option<std::path::PathBuf>,
    /// Device config JSON (pulse defaults for --dump-schedule without a gate).
    #[arg(long, env = "CRCAL_DEVICE", default_value = "device_default.json")]
    device: std::path::PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding calibrate/benchmark outputs.
    #[arg(long, env = "CRCAL_OUTPUT", default_value = "crcal_out")]
    output: std::path::PathBuf,
    /// Report format.
    #[arg(long, env = "CRCAL_FORMAT", default_value = "text")]
    format: ReportFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Best effort: the pool can only be sized once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }

    let outcome = match cli.command {
        Command::Calibrate(args) => commands::calibrate::run(args),
        Command::Benchmark(args) => commands::benchmark::run(args),
        Command::Synthesize(args) => commands::synthesize::run(args),
        Command::Report(args) => commands::report::run(args),
    };

    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
