//! `crcal synthesize`: prints the wrapper table converting ZX(theta) into
//! all nine AB(theta) gates, and optionally dumps the unitaries and the
//! echoed pulse schedule as JSON.

use anyhow::{Context, Result};
use serde::Serialize;

use crcal_core::calibration::CalibratedGate;
use crcal_core::device::DeviceConfig;
use crcal_core::pulse::{EchoedCrSchedule, PulseParams};
use crcal_core::synthesis::{identity_wrappers, Pauli, Wrapper};

use crate::output::{read_to_string, write_text};
use crate::SynthesizeArgs;

#[derive(Serialize)]
struct UnitaryDump {
    theta: f64,
    /// Row-major matrices of (re, im) pairs, keyed by gate label.
    gates: Vec<GateUnitary>,
}

#[derive(Serialize)]
struct GateUnitary {
    label: String,
    wrappers: WrapperTable,
    matrix: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct WrapperTable {
    pre_control: Vec<String>,
    post_control: Vec<String>,
    pre_target: Vec<String>,
    post_target: Vec<String>,
}

fn names(list: &[Wrapper]) -> Vec<String> {
    list.iter().map(|w| w.to_string()).collect()
}

fn word(list: &[Wrapper]) -> String {
    if list.is_empty() {
        "-".to_string()
    } else {
        names(list).join(" ")
    }
}

#[derive(Serialize)]
struct ScheduleDump {
    description: &'static str,
    duration_ns: f64,
    cr_drive_area_ns: f64,
    schedule: EchoedCrSchedule,
}

pub fn run(args: SynthesizeArgs) -> Result<i32> {
    println!("single-qubit wrappers realizing AB(theta) from ZX(theta):");
    println!(
        "{:<6} {:<22} {:<22} {:<22} {:<22}",
        "gate", "pre(control)", "post(control)", "pre(target)", "post(target)"
    );

    let mut dump = UnitaryDump {
        theta: args.theta,
        gates: Vec::with_capacity(9),
    };
    for a in Pauli::ALL {
        for b in Pauli::ALL {
            let mut spec = identity_wrappers(a, b);
            spec.theta = args.theta;
            let w = &spec.wrappers;
            println!(
                "{:<6} {:<22} {:<22} {:<22} {:<22}",
                format!("{a}{b}"),
                word(&w.pre_control),
                word(&w.post_control),
                word(&w.pre_target),
                word(&w.post_target)
            );
            dump.gates.push(GateUnitary {
                label: format!("{a}{b}"),
                wrappers: WrapperTable {
                    pre_control: names(&w.pre_control),
                    post_control: names(&w.post_control),
                    pre_target: names(&w.pre_target),
                    post_target: names(&w.post_target),
                },
                matrix: spec.unitary().to_rows(),
            });
        }
    }

    if let Some(path) = &args.dump_unitaries {
        let dir = path.parent().unwrap_or(std::path::Path::new("."));
        let name = path
            .file_name()
            .context("--dump-unitaries needs a file name")?;
        write_text(
            dir,
            &name.to_string_lossy(),
            &(serde_json::to_string_pretty(&dump)? + "\n"),
        )?;
        println!("wrote unitaries to {}", path.display());
    }

    if let Some(path) = &args.dump_schedule {
        let (schedule, description) = match &args.gate {
            Some(gate_path) => {
                let gate = CalibratedGate::from_json(&read_to_string(gate_path)?)
                    .with_context(|| format!("gate file {} is invalid", gate_path.display()))?;
                (
                    gate.to_schedule()
                        .map_err(|e| anyhow::anyhow!("gate schedule: {e}"))?,
                    "calibrated gate schedule",
                )
            }
            None => {
                let dev =
                    DeviceConfig::from_json(&read_to_string(&args.device)?).with_context(|| {
                        format!("device config {} is invalid", args.device.display())
                    })?;
                let cr = PulseParams::flat_top_gaussian(
                    0.25,
                    0.0,
                    dev.metadata.cr_width_ns,
                    dev.metadata.cr_rise_ns,
                )
                .map_err(|e| anyhow::anyhow!("demo pulse: {e}"))?;
                (
                    EchoedCrSchedule::new(cr, None, 0.0)
                        .map_err(|e| anyhow::anyhow!("demo schedule: {e}"))?,
                    "uncalibrated demo schedule at the inherited pulse geometry",
                )
            }
        };
        let sq = DeviceConfig::from_json(&read_to_string(&args.device)?)
            .map(|d| d.sq_pulse_ns)
            .unwrap_or(35.6);
        let dump = ScheduleDump {
            description,
            duration_ns: schedule.duration(sq),
            cr_drive_area_ns: schedule.cr_drive_area(),
            schedule,
        };
        let dir = path.parent().unwrap_or(std::path::Path::new("."));
        let name = path
            .file_name()
            .context("--dump-schedule needs a file name")?;
        write_text(
            dir,
            &name.to_string_lossy(),
            &(serde_json::to_string_pretty(&dump)? + "\n"),
        )?;
        println!("wrote schedule to {}", path.display());
    }

    Ok(0)
}
