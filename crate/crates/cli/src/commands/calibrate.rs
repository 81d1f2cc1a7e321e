//! `crcal calibrate`: runs the full pipeline and persists the gate, the
//! amplitude sweep, the verification tomography, and the coefficient
//! reports. Exits 0 on a passing verification, 2 when the dominance gate
//! fails, 1 on usage or configuration errors.

use anyhow::{Context, Result};
use serde::Serialize;

use crcal_core::calibration::{run_full_calibration, CalibrationConfig};
use crcal_core::device::DeviceConfig;
use crcal_core::tomography::CoefficientReport;

use crate::output::{csv_header, read_to_string, write_json, write_run_meta, write_text};
use crate::CalibrateArgs;

#[derive(Serialize)]
struct VerificationFile<'a> {
    master_seed: u64,
    config_hash: &'a str,
    theta: f64,
    #[serde(flatten)]
    summary: &'a crcal_core::calibration::VerificationSummary,
}

#[derive(Serialize)]
struct CoefficientsFile<'a> {
    master_seed: u64,
    config_hash: &'a str,
    reports: Vec<&'a CoefficientReport>,
}

pub fn run(args: CalibrateArgs) -> Result<i32> {
    let device_json = read_to_string(&args.device)?;
    let dev = DeviceConfig::from_json(&device_json).with_context(|| {
        format!(
            "device config {} is invalid (see docs/file_formats.md for the schema)",
            args.device.display()
        )
    })?;

    let config = CalibrationConfig {
        sweep_shots: args.shots,
        tomography_shots: args.shots,
        verify_inverse: !args.skip_inverse,
        ..CalibrationConfig::with_seed(args.seed)
    };

    let run =
        run_full_calibration(&dev, args.theta, &config).context("calibration pipeline failed")?;

    let dir = &args.output;
    let hash = run.gate.provenance.config_hash.clone();
    let header = csv_header(args.seed, &hash);

    write_text(dir, "gate_zx_theta.json", &(run.gate.to_json() + "\n"))?;
    write_text(
        dir,
        "amplitude_sweep.csv",
        &format!("{header}{}", run.sweep.to_csv()),
    )?;
    write_text(
        dir,
        "tomography.csv",
        &format!("{header}{}", run.verification.gate_data.to_csv()),
    )?;
    if let Some(inverse) = &run.verification.inverse_data {
        write_text(
            dir,
            "tomography_inverse.csv",
            &format!("{header}{}", inverse.to_csv()),
        )?;
    }

    let baseline_report = CoefficientReport::new("baseline", &run.baseline.coefficients);
    let probe_report = run
        .cancel_probe
        .as_ref()
        .map(|p| CoefficientReport::new("cancellation_probe", &p.coefficients));
    let mut reports = vec![&baseline_report, &run.verification.summary.gate];
    if let Some(r) = &probe_report {
        reports.insert(1, r);
    }
    if let Some(inv) = &run.verification.summary.inverse {
        reports.push(inv);
    }
    write_json(
        dir,
        "coefficients.json",
        &CoefficientsFile {
            master_seed: args.seed,
            config_hash: &hash,
            reports,
        },
    )?;
    write_json(
        dir,
        "verification_report.json",
        &VerificationFile {
            master_seed: args.seed,
            config_hash: &hash,
            theta: args.theta,
            summary: &run.verification.summary,
        },
    )?;
    write_run_meta(dir, "calibrate")?;

    let summary = &run.verification.summary;
    println!(
        "calibrated CR({:.6}): amplitude {:.6}, phase {:.6}, cancellation ({:.6}, {:.6})",
        run.gate.theta,
        run.gate.amplitude,
        run.gate.cr_phase,
        run.gate.cancel_amplitude,
        run.gate.cancel_phase
    );
    println!(
        "verification dominance ratio {:.5} (threshold {:.5}): {}",
        summary.dominance_ratio,
        summary.threshold,
        if summary.passed { "pass" } else { "FAIL" }
    );

    if !summary.passed {
        eprintln!(
            "verification failed: dominance ratio {:.5} exceeds threshold {:.5}",
            summary.dominance_ratio, summary.threshold
        );
        Ok(2)
    } else {
        Ok(0)
    }
}
