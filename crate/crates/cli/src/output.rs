use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use optscale::run_store::{ingest_runs, Format, RunSet};
use optscale::{Error, ErrorClass, Result, SCHEMA_VERSION};
use serde::Serialize;
use serde_json::{json, Value};

/// Writes `bytes` to `path` via a temporary sibling and a rename, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Standard result wrapper carried by every JSON output.
pub fn envelope<C: Serialize, R: Serialize>(
    command: &str,
    seed: u64,
    config: &C,
    input: Option<Value>,
    result: &R,
) -> Result<Value> {
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config": serde_json::to_value(config)?,
        "input": input.unwrap_or(Value::Null),
        "result": serde_json::to_value(result)?,
    }))
}

pub fn input_summary(path: &Path, runs: &RunSet) -> Value {
    json!({
        "path": path.display().to_string(),
        "records": runs.len(),
        "optimizers": runs.optimizers(),
        "provenance": runs.provenance(),
        "compute_unit": runs.compute_unit(),
    })
}

fn format_for(path: &Path, explicit: Option<Format>) -> Format {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "json" | "ndjson") => Format::JsonLines,
        _ => Format::Csv,
    })
}

pub fn read_runs(path: &Path, format: Option<Format>, compute_unit: Option<&str>) -> Result<RunSet> {
    let file = File::open(path).map_err(|e| {
        Error::Argument(format!("cannot open input {}: {e}", path.display()))
    })?;
    let runs = ingest_runs(BufReader::new(file), format_for(path, format))?;
    Ok(match compute_unit {
        Some(u) => runs.with_compute_unit(Some(u.to_string())),
        None => runs,
    })
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn kind_name(err: &Error) -> &'static str {
    match err {
        Error::Parse { .. } => "parse",
        Error::Validation { .. } => "validation",
        Error::Conflict { .. } => "conflict",
        Error::Argument(_) => "argument",
        Error::Underdetermined { .. } => "underdetermined",
        Error::Numerical(_) => "numerical",
        Error::Schema(_) => "schema",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Usage => "usage",
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
    }
}

/// One-line JSON error for standard error.
pub fn error_json(class: ErrorClass, kind: &str, message: &str) -> String {
    json!({
        "error": {
            "class": class_name(class),
            "kind": kind,
            "exit_code": exit_code(class),
            "message": message,
        }
    })
    .to_string()
}

pub fn report_error(err: &Error) -> i32 {
    let class = err.class();
    eprintln!("{}", error_json(class, kind_name(err), &err.to_string()));
    exit_code(class)
}
