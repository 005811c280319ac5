//! Artifact names and JSON/JSONL file helpers. Every artifact lives directly
//! under the output directory and is prefixed with the stage that writes it.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub const UNITS: &str = "abstract.units.jsonl";
pub const MANIFEST: &str = "mutate.manifest.jsonl";
pub const SEQUENCES: &str = "mutate.sequences.jsonl";
pub const MUTANTS_DIR: &str = "mutate.mutants";
pub const BASELINE: &str = "run.baseline.json";
pub const RESULTS: &str = "run.results.jsonl";
pub const TIMINGS: &str = "run.timings.json";
pub const LABELS: &str = "label.labels.jsonl";
pub const LABEL_SUMMARY: &str = "label.summary.json";
pub const EMBED_MODEL: &str = "embed.model.bin";
pub const VECTORS: &str = "embed.vectors.jsonl";
pub const FOREST: &str = "train.forest.bin";
pub const METRICS: &str = "train.metrics.json";
pub const CV_PREDICTIONS: &str = "train.predictions.csv";
pub const PREDICTIONS: &str = "predict.predictions.csv";
pub const REPORT_MD: &str = "report.md";
pub const REPORT_JSON: &str = "report.json";

/// Path of an upstream artifact, which must exist.
pub fn upstream(dir: &Path, name: &str, stage: &'static str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(CliError::MissingUpstreamArtifact { path, stage });
    }
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| CliError::Fatal(e.to_string()))?;
        writeln!(w, "{line}").map_err(CliError::io(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = fs::File::open(path).map_err(CliError::io(path))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| CliError::StaleUpstreamArtifact {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Fatal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::StaleUpstreamArtifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
