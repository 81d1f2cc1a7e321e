//! `crcal benchmark`: interleaved randomized benchmarking of the
//! configured gate list against the reference decay, writing per-gate
//! decay curves and a summary with F_S and F_C per gate.

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crcal_core::calibration::{config_digest, CalibratedGate};
use crcal_core::clifford::CliffordGroup;
use crcal_core::device::DeviceConfig;
use crcal_core::rb::{benchmark_gate, GateBenchmark, RbConfig};
use crcal_core::synthesis::parse_gate_label;

use crate::output::{csv_header, read_to_string, write_json, write_run_meta, write_text};
use crate::BenchmarkArgs;

#[derive(Serialize)]
struct Summary {
    master_seed: u64,
    config_hash: String,
    theta: f64,
    rb: RbConfig,
    gates: Vec<GateBenchmark>,
}

pub fn run(args: BenchmarkArgs) -> Result<i32> {
    let device_json = read_to_string(&args.device)?;
    let dev = DeviceConfig::from_json(&device_json)
        .with_context(|| format!("device config {} is invalid", args.device.display()))?;

    let gate_path = args
        .gate
        .clone()
        .unwrap_or_else(|| args.output.join("gate_zx_theta.json"));
    let gate_json = read_to_string(&gate_path)
        .context("missing calibrated gate file; run `crcal calibrate` first or pass --gate")?;
    let gate = CalibratedGate::from_json(&gate_json)
        .with_context(|| format!("gate file {} is invalid", gate_path.display()))?;

    if args.gates.is_empty() {
        bail!("no gates requested");
    }
    for label in &args.gates {
        parse_gate_label(label)
            .map_err(|e| anyhow::anyhow!("invalid gate label {label:?}: {e}"))?;
    }

    let cfg = RbConfig {
        shots: args.shots,
        ..RbConfig::default()
    };
    let config_hash =
        config_digest(&[&device_json, &serde_json::to_string(&cfg)?, &gate.to_json()]);

    let group = CliffordGroup::enumerate();
    let header = csv_header(args.seed, &config_hash);
    let mut summaries = Vec::with_capacity(args.gates.len());
    for label in &args.gates {
        let (summary, curves) = benchmark_gate(&dev, &group, &cfg, args.seed, label)
            .with_context(|| format!("benchmarking {label}"))?;
        let mut csv = format!("{header}variant,m,mean_p00,std_dev,std_err\n");
        for curve in &curves {
            csv.push_str(&curve.to_csv_rows());
        }
        write_text(&args.output, &format!("rb_{label}.csv"), &csv)?;
        println!(
            "{label}: F_standard = {:.6} +/- {:.1e}, F_custom = {:.6} +/- {:.1e} ({})",
            summary.f_standard.f,
            summary.f_standard.std_err,
            summary.f_custom.f,
            summary.f_custom.std_err,
            if summary.f_custom.f >= summary.f_standard.f {
                "F_C >= F_S"
            } else {
                "F_C < F_S"
            }
        );
        summaries.push(summary);
    }

    write_json(
        &args.output,
        "rb_summary.json",
        &Summary {
            master_seed: args.seed,
            config_hash,
            theta: gate.theta,
            rb: cfg,
            gates: summaries,
        },
    )?;
    write_run_meta(&args.output, "benchmark")?;
    Ok(0)
}
