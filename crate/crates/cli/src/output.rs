//! File output helpers shared by the subcommands.
//!
//! Data payloads are deterministic for fixed seeds and configs; wall-clock
//! information is confined to `run_meta.json`, which is the one file
//! excluded from reproducibility comparisons.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Provenance header prepended to every CSV payload.
pub fn csv_header(master_seed: u64, config_hash: &str) -> String {
    format!("# master_seed={master_seed}\n# config_hash={config_hash}\n")
}

pub fn write_text(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    write_text(dir, name, &json)
}

/// Run metadata: the only output carrying timestamps, kept separate so the
/// data payloads stay byte-identical across reruns.
#[derive(Serialize)]
pub struct RunMeta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub unix_time_s: u64,
}

pub fn write_run_meta(dir: &Path, command: &str) -> Result<()> {
    let meta = RunMeta {
        tool: "crcal",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        unix_time_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    write_json(dir, "run_meta.json", &meta)
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
