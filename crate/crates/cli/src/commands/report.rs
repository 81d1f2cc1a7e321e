//! `crcal report`: consolidates the outputs of `calibrate` and `benchmark`
//! into one human-readable text report or a single merged JSON document,
//! marking missing sections explicitly.

use std::path::Path;

use anyhow::{bail, Result};
use serde::Serialize;
use serde_json::Value;

use crate::output::write_text;
use crate::{ReportArgs, ReportFormat};

const EXPECTED_FILES: [&str; 5] = [
    "gate_zx_theta.json",
    "amplitude_sweep.csv",
    "coefficients.json",
    "verification_report.json",
    "rb_summary.json",
];

#[derive(Serialize)]
struct MergedReport {
    index: Vec<IndexEntry>,
    missing: Vec<String>,
    gate: Option<Value>,
    verification: Option<Value>,
    coefficients: Option<Value>,
    benchmark: Option<Value>,
}

#[derive(Serialize)]
struct IndexEntry {
    file: String,
    bytes: u64,
}

fn load_json(dir: &Path, name: &str) -> Option<Value> {
    let text = std::fs::read_to_string(dir.join(name)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn run(args: ReportArgs) -> Result<i32> {
    let dir = &args.output;
    let entries: Vec<IndexEntry> = match std::fs::read_dir(dir) {
        Ok(rd) => {
            let mut v: Vec<IndexEntry> = rd
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_file())
                .map(|e| IndexEntry {
                    file: e.file_name().to_string_lossy().into_owned(),
                    bytes: e.metadata().map(|m| m.len()).unwrap_or(0),
                })
                .collect();
            v.sort_by(|a, b| a.file.cmp(&b.file));
            v
        }
        Err(_) => bail!(
            "output directory {} does not exist; expected files: {}",
            dir.display(),
            EXPECTED_FILES.join(", ")
        ),
    };
    if entries.is_empty() {
        bail!(
            "output directory {} is empty; expected files: {}",
            dir.display(),
            EXPECTED_FILES.join(", ")
        );
    }

    let missing: Vec<String> = EXPECTED_FILES
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();

    let merged = MergedReport {
        index: entries,
        missing: missing.clone(),
        gate: load_json(dir, "gate_zx_theta.json"),
        verification: load_json(dir, "verification_report.json"),
        coefficients: load_json(dir, "coefficients.json"),
        benchmark: load_json(dir, "rb_summary.json"),
    };

    match args.format {
        ReportFormat::Json => {
            let json = serde_json::to_string_pretty(&merged)? + "\n";
            write_text(dir, "report.json", &json)?;
            println!("{json}");
        }
        ReportFormat::Text => {
            let text = render_text(&merged);
            write_text(dir, "report.txt", &text)?;
            println!("{text}");
        }
    }
    Ok(0)
}

/// Numbers render at 9 significant digits, matching the CSV payloads.
fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) if x == x.trunc() && x.abs() < 1e9 => format!("{x}"),
        Some(x) => format!("{x:.8e}"),
        None => v.to_string(),
    }
}

fn render_text(r: &MergedReport) -> String {
    let mut out = String::new();
    out.push_str("== crcal campaign report ==\n\n");

    out.push_str("files:\n");
    for e in &r.index {
        out.push_str(&format!("  {:<28} {:>9} bytes\n", e.file, e.bytes));
    }
    if !r.missing.is_empty() {
        out.push_str("\nmissing sections:\n");
        for m in &r.missing {
            out.push_str(&format!(
                "  {m} (run `crcal calibrate` / `crcal benchmark`)\n"
            ));
        }
    }

    out.push_str("\n-- calibrated gate --\n");
    match &r.gate {
        Some(g) => {
            let gate = &g["gate"];
            for (label, key) in [
                ("theta", "theta"),
                ("amplitude", "amplitude"),
                ("cr_phase", "cr_phase"),
                ("cancel_amplitude", "cancel_amplitude"),
                ("cancel_phase", "cancel_phase"),
                ("width_ns", "width"),
                ("rise_ns", "rise"),
            ] {
                out.push_str(&format!("  {:<18} {}\n", label, num(&gate[key])));
            }
            out.push_str(&format!(
                "  {:<18} {}\n",
                "tomography_runs", gate["provenance"]["tomography_experiments"]
            ));
        }
        None => out.push_str("  (missing)\n"),
    }

    out.push_str("\n-- verification coefficients (rad/us) --\n");
    match &r.verification {
        Some(v) => {
            let c = &v["gate"]["coefficients"];
            for key in ["c_zx", "c_zy", "c_zz", "c_ix", "c_iy", "c_iz"] {
                out.push_str(&format!("  {:<6} {}\n", key, num(&c[key])));
            }
            out.push_str(&format!(
                "  dominance ratio {} (threshold {}) passed={}\n",
                num(&v["dominance_ratio"]),
                num(&v["threshold"]),
                v["passed"]
            ));
        }
        None => out.push_str("  (missing)\n"),
    }

    out.push_str("\n-- interleaved benchmarking --\n");
    match &r.benchmark {
        Some(b) => {
            out.push_str(&format!(
                "  {:<6} {:>16} {:>16} {:>16} {:>16}\n",
                "gate", "F_standard", "F_custom", "se(F_S)", "se(F_C)"
            ));
            if let Some(gates) = b["gates"].as_array() {
                for g in gates {
                    out.push_str(&format!(
                        "  {:<6} {:>16} {:>16} {:>16} {:>16}\n",
                        g["gate"].as_str().unwrap_or("?"),
                        num(&g["f_standard"]["f"]),
                        num(&g["f_custom"]["f"]),
                        num(&g["f_standard"]["std_err"]),
                        num(&g["f_custom"]["std_err"]),
                    ));
                }
            }
        }
        None => out.push_str("  (missing)\n"),
    }

    out
}
