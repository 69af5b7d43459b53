//! Training-run records: ingestion, validation, filtering and conversion to
//! log-space fit points.
//!
//! Accepted inputs are CSV with a header row
//! (`optimizer,arch,n_params,tokens,loss[,compute]`) or JSON lines with the
//! same keys. Lines starting with `#` are comments. Two comment forms are
//! recognized as metadata so that a serialized [`RunSet`] ingests back to an
//! equal value:
//!
//! ```text
//! # provenance: <free text>
//! # compute_unit: <unit>
//! ```

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::law_models::Axis;
use crate::{Error, Result};

const PROVENANCE_TAG: &str = "# provenance:";
const COMPUTE_UNIT_TAG: &str = "# compute_unit:";

/// Relative tolerance under which two duplicate rows count as the same run.
pub const DUPLICATE_LOSS_RTOL: f64 = 1e-12;

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub optimizer: String,
    pub arch: String,
    /// Parameter count, embeddings included.
    pub n_params: u64,
    pub tokens: u64,
    /// Test cross-entropy in nats.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute: Option<f64>,
}

impl RunRecord {
    fn key(&self) -> (String, String, u64, u64) {
        (
            self.optimizer.clone(),
            self.arch.clone(),
            self.n_params,
            self.tokens,
        )
    }

    fn validate(&self, line: u64) -> Result<()> {
        let fail = |message: String| Err(Error::Validation { line, message });
        if self.n_params == 0 {
            return fail("n_params must be positive".into());
        }
        if self.tokens == 0 {
            return fail("tokens must be positive".into());
        }
        if !(self.loss.is_finite() && self.loss > 0.0) {
            return fail(format!("loss must be positive and finite, got {}", self.loss));
        }
        if let Some(c) = self.compute {
            if !(c.is_finite() && c > 0.0) {
                return fail(format!("compute must be positive and finite, got {c}"));
            }
        }
        Ok(())
    }
}

/// Input encoding for [`ingest_runs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    JsonLines,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json-lines" | "jsonlines" | "ndjson" => Ok(Format::JsonLines),
            other => Err(Error::Argument(format!("unknown input format {other:?}"))),
        }
    }
}

/// A validated, deduplicated, insertion-ordered collection of runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSet {
    records: Vec<RunRecord>,
    compute_unit: Option<String>,
    provenance: String,
}

impl RunSet {
    /// Validates and deduplicates `records`. Record `i` is reported as line
    /// `i + 1` in errors.
    pub fn from_records(
        records: impl IntoIterator<Item = RunRecord>,
        compute_unit: Option<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let mut builder = Builder::default();
        for (i, rec) in records.into_iter().enumerate() {
            builder.push(rec, i as u64 + 1)?;
        }
        Ok(builder.finish(compute_unit, provenance.into()))
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn compute_unit(&self) -> Option<&str> {
        self.compute_unit.as_deref()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_compute_unit(mut self, unit: Option<String>) -> Self {
        self.compute_unit = unit;
        self
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Sorted, distinct optimizer labels.
    pub fn optimizers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.optimizer.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    fn subset(&self, keep: impl Fn(&RunRecord) -> bool) -> RunSet {
        RunSet {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            compute_unit: self.compute_unit.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Serializes as CSV, metadata first as tagged comment lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        if !self.provenance.is_empty() {
            writeln!(out, "{PROVENANCE_TAG} {}", one_line(&self.provenance))?;
        }
        if let Some(unit) = &self.compute_unit {
            writeln!(out, "{COMPUTE_UNIT_TAG} {}", one_line(unit))?;
        }
        let with_compute = self.records.iter().any(|r| r.compute.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["optimizer", "arch", "n_params", "tokens", "loss"];
        if with_compute {
            header.push("compute");
        }
        w.write_record(&header).map_err(csv_io)?;
        for r in &self.records {
            let mut row = vec![
                r.optimizer.clone(),
                r.arch.clone(),
                r.n_params.to_string(),
                r.tokens.to_string(),
                format!("{:?}", r.loss),
            ];
            if with_compute {
                row.push(r.compute.map(|c| format!("{c:?}")).unwrap_or_default());
            }
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Serializes as JSON lines, metadata first as tagged comment lines.
    pub fn write_json_lines<W: Write>(&self, mut out: W) -> Result<()> {
        if !self.provenance.is_empty() {
            writeln!(out, "{PROVENANCE_TAG} {}", one_line(&self.provenance))?;
        }
        if let Some(unit) = &self.compute_unit {
            writeln!(out, "{COMPUTE_UNIT_TAG} {}", one_line(unit))?;
        }
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            writeln!(out)?;
        }
        Ok(())
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Default)]
struct Builder {
    records: Vec<RunRecord>,
    lines: Vec<u64>,
    index: HashMap<(String, String, u64, u64), usize>,
}

impl Builder {
    fn push(&mut self, rec: RunRecord, line: u64) -> Result<()> {
        rec.validate(line)?;
        let key = rec.key();
        if let Some(&i) = self.index.get(&key) {
            let first = &self.records[i];
            let scale = first.loss.abs().max(rec.loss.abs());
            if (first.loss - rec.loss).abs() <= DUPLICATE_LOSS_RTOL * scale {
                return Ok(());
            }
            return Err(Error::Conflict {
                line,
                first_line: self.lines[i],
                key: format!("({}, {}, {}, {})", key.0, key.1, key.2, key.3),
                first_loss: first.loss,
                loss: rec.loss,
            });
        }
        self.index.insert(key, self.records.len());
        self.records.push(rec);
        self.lines.push(line);
        Ok(())
    }

    fn finish(self, compute_unit: Option<String>, provenance: String) -> RunSet {
        RunSet {
            records: self.records,
            compute_unit,
            provenance,
        }
    }
}

/// Reads, validates and deduplicates runs from `source`.
///
/// Rows with an identical `(optimizer, arch, n_params, tokens)` key and the
/// same loss (to [`DUPLICATE_LOSS_RTOL`]) collapse onto the first
/// occurrence; a differing loss is a [`Error::Conflict`].
pub fn ingest_runs<R: Read>(mut source: R, format: Format) -> Result<RunSet> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;

    let mut provenance = String::new();
    let mut compute_unit = None;
    for line in text.lines() {
        let line = line.trim_start();
        if let Some(p) = line.strip_prefix(PROVENANCE_TAG) {
            provenance = p.trim().to_string();
        } else if let Some(u) = line.strip_prefix(COMPUTE_UNIT_TAG) {
            compute_unit = Some(u.trim().to_string());
        }
    }

    let mut builder = Builder::default();
    match format {
        Format::Csv => ingest_csv(&text, &mut builder)?,
        Format::JsonLines => ingest_json_lines(&text, &mut builder)?,
    }
    Ok(builder.finish(compute_unit, provenance))
}

const REQUIRED: [&str; 5] = ["optimizer", "arch", "n_params", "tokens", "loss"];

fn ingest_csv(text: &str, builder: &mut Builder) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let header_line = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let position = |name: &str| header_line.iter().position(|h| h == name);
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(REQUIRED) {
        *slot = position(name).ok_or_else(|| Error::Parse {
            line: reader.position().line().max(1),
            message: format!("header is missing required column {name:?}"),
        })?;
    }
    let compute_col = position("compute");

    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, name: &str| {
            row.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing value for column {name:?}"),
            })
        };
        let text_field = |i: usize, name: &str| -> Result<String> {
            let v = field(i, name)?;
            if v.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("empty value for column {name:?}"),
                });
            }
            Ok(v.to_string())
        };
        let record = RunRecord {
            optimizer: text_field(cols[0], "optimizer")?,
            arch: text_field(cols[1], "arch")?,
            n_params: parse_count(field(cols[2], "n_params")?, "n_params", line)?,
            tokens: parse_count(field(cols[3], "tokens")?, "tokens", line)?,
            loss: parse_real(field(cols[4], "loss")?, "loss", line)?,
            compute: match compute_col.and_then(|c| row.get(c)) {
                None | Some("") => None,
                Some(v) => Some(parse_real(v, "compute", line)?),
            },
        };
        builder.push(record, line)?;
    }
    Ok(())
}

fn ingest_json_lines(text: &str, builder: &mut Builder) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            line,
            message: "expected a JSON object".into(),
        })?;
        let get = |name: &str| {
            obj.get(name).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing key {name:?}"),
            })
        };
        let label = |name: &str| -> Result<String> {
            match get(name)? {
                serde_json::Value::String(s) if !s.is_empty() => Ok(s.clone()),
                _ => Err(Error::Parse {
                    line,
                    message: format!("key {name:?} must be a non-empty string"),
                }),
            }
        };
        let scalar = |v: &serde_json::Value, name: &str| -> Result<String> {
            match v {
                serde_json::Value::Number(n) => Ok(n.to_string()),
                serde_json::Value::String(s) => Ok(s.clone()),
                _ => Err(Error::Parse {
                    line,
                    message: format!("key {name:?} must be numeric"),
                }),
            }
        };
        let record = RunRecord {
            optimizer: label("optimizer")?,
            arch: label("arch")?,
            n_params: parse_count(&scalar(get("n_params")?, "n_params")?, "n_params", line)?,
            tokens: parse_count(&scalar(get("tokens")?, "tokens")?, "tokens", line)?,
            loss: parse_real(&scalar(get("loss")?, "loss")?, "loss", line)?,
            compute: match obj.get("compute") {
                None | Some(serde_json::Value::Null) => None,
                Some(v) => Some(parse_real(&scalar(v, "compute")?, "compute", line)?),
            },
        };
        builder.push(record, line)?;
    }
    Ok(())
}

/// Parses a positive count; accepts integer literals and exact-integer floats
/// such as `1.5e9`. Non-numeric text is a parse error, numeric but
/// non-positive or fractional values are validation errors.
fn parse_count(s: &str, name: &str, line: u64) -> Result<u64> {
    if let Ok(v) = s.parse::<u64>() {
        if v == 0 {
            return Err(Error::Validation {
                line,
                message: format!("{name} must be positive"),
            });
        }
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{name}: {s:?} is not a number"),
    })?;
    if !v.is_finite() || v <= 0.0 || v.fract() != 0.0 || v >= 2f64.powi(63) {
        return Err(Error::Validation {
            line,
            message: format!("{name} must be a positive integer, got {s}"),
        });
    }
    Ok(v as u64)
}

fn parse_real(s: &str, name: &str, line: u64) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{name}: {s:?} is not a number"),
    })?;
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::Validation {
            line,
            message: format!("{name} must be positive and finite, got {s}"),
        });
    }
    Ok(v)
}

/// Selection criteria for [`filter_runs`]. Size bounds are inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterCriteria {
    pub optimizer: Option<String>,
    pub arch: Option<String>,
    pub min_n: Option<u64>,
    pub max_n: Option<u64>,
}

pub fn filter_runs(rs: &RunSet, criteria: &FilterCriteria) -> Result<RunSet> {
    if let (Some(lo), Some(hi)) = (criteria.min_n, criteria.max_n) {
        if lo > hi {
            return Err(Error::Argument(format!(
                "min_n ({lo}) exceeds max_n ({hi})"
            )));
        }
    }
    Ok(rs.subset(|r| {
        criteria.optimizer.as_ref().is_none_or(|o| &r.optimizer == o)
            && criteria.arch.as_ref().is_none_or(|a| &r.arch == a)
            && criteria.min_n.is_none_or(|lo| r.n_params >= lo)
            && criteria.max_n.is_none_or(|hi| r.n_params <= hi)
    }))
}

/// One fit-ready row, natural logarithms throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPoint {
    pub log_n: f64,
    /// ln of the second covariate: tokens, or compute when the owning
    /// [`FitPoints`] has [`Axis::Compute`].
    pub log_d: f64,
    pub log_loss: f64,
}

/// Log-space rows with parallel optimizer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FitPoints {
    axis: Axis,
    rows: Vec<LogPoint>,
    labels: Vec<String>,
}

impl FitPoints {
    pub fn new(axis: Axis, rows: Vec<LogPoint>, labels: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Argument(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(i) = rows
            .iter()
            .position(|p| !(p.log_n.is_finite() && p.log_d.is_finite() && p.log_loss.is_finite()))
        {
            return Err(Error::Argument(format!("row {i} has a non-finite entry")));
        }
        Ok(FitPoints { axis, rows, labels })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn rows(&self) -> &[LogPoint] {
        &self.rows
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sorted, distinct optimizer labels.
    pub fn optimizers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.labels.iter().map(String::as_str).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn for_optimizer(&self, label: &str) -> FitPoints {
        self.select(|i| self.labels[i] == label)
    }

    /// All rows except `index`.
    pub fn without(&self, index: usize) -> FitPoints {
        self.select(|i| i != index)
    }

    fn select(&self, keep: impl Fn(usize) -> bool) -> FitPoints {
        let idx: Vec<usize> = (0..self.rows.len()).filter(|&i| keep(i)).collect();
        FitPoints {
            axis: self.axis,
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    /// Smallest observed loss (not its log).
    pub fn min_loss(&self) -> Option<f64> {
        self.rows
            .iter()
            .map(|p| p.log_loss)
            .reduce(f64::min)
            .map(f64::exp)
    }
}

/// `(ln N, ln D, ln L)` per record.
pub fn to_log_points(rs: &RunSet) -> FitPoints {
    let rows = rs
        .records
        .iter()
        .map(|r| LogPoint {
            log_n: (r.n_params as f64).ln(),
            log_d: (r.tokens as f64).ln(),
            log_loss: r.loss.ln(),
        })
        .collect();
    FitPoints {
        axis: Axis::Data,
        rows,
        labels: rs.records.iter().map(|r| r.optimizer.clone()).collect(),
    }
}

/// `(ln N, ln C, ln L)` per record; every record must carry compute.
pub fn to_log_points_compute(rs: &RunSet) -> Result<FitPoints> {
    let mut rows = Vec::with_capacity(rs.len());
    for (i, r) in rs.records.iter().enumerate() {
        let c = r.compute.ok_or_else(|| {
            Error::Argument(format!(
                "record {} ({}, {}, N={}, D={}) has no compute value",
                i + 1,
                r.optimizer,
                r.arch,
                r.n_params,
                r.tokens
            ))
        })?;
        rows.push(LogPoint {
            log_n: (r.n_params as f64).ln(),
            log_d: c.ln(),
            log_loss: r.loss.ln(),
        });
    }
    Ok(FitPoints {
        axis: Axis::Compute,
        rows,
        labels: rs.records.iter().map(|r| r.optimizer.clone()).collect(),
    })
}
