//! Every run that writes artifacts records its full invocation next to the
//! output, so results stay reproducible.

use std::path::Path;

use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
struct RunRecord {
    command: String,
    argv: Vec<String>,
    seed: u64,
    precision: String,
    tool_version: &'static str,
}

/// Writes `<artifact>.run.json` (or `run.json` inside a directory artifact).
pub fn record_run(artifact: &Path, command: &str, seed: u64, precision: &str) -> Result<(), CliError> {
    let record = RunRecord {
        command: command.to_string(),
        argv: std::env::args().collect(),
        seed,
        precision: precision.to_string(),
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    let json = serde_json::to_string_pretty(&record).expect("plain struct serializes");
    let path = if artifact.is_dir() {
        artifact.join("run.json")
    } else {
        let mut name = artifact
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string());
        name.push_str(".run.json");
        artifact.with_file_name(name)
    };
    std::fs::write(path, json)?;
    Ok(())
}
