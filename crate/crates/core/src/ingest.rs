//! Epoch-level count files and outcome files.
//!
//! Epoch CSV: `subject_id,timestamp,count` with ISO-8601 local timestamps at
//! minute resolution. Only epochs whose clock time falls in the wake window
//! (default `[08:00, 20:00)`) are kept; all days are concatenated per subject.
//! Outcome CSV: `subject_id,edss`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::represent::SubjectSample;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("missing column `{0}` in header")]
    MissingColumn(&'static str),
    #[error("duplicate subject `{0}` in outcome file")]
    DuplicateSubject(String),
    #[error("no subject has both epochs and an outcome")]
    EmptyJoin,
    #[error("negative value {0} cannot be log-transformed")]
    NegativeValue(f64),
    #[error("invalid window [{0}, {1}) minutes")]
    InvalidWindow(u32, u32),
    #[error("subject {0} has no {1} outcome")]
    MissingOutcome(String, &'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, IngestError>;

/// Half-open clock window in minutes after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpochWindow {
    pub start_minute: u32,
    pub end_minute: u32,
}

impl Default for EpochWindow {
    fn default() -> Self {
        EpochWindow { start_minute: 8 * 60, end_minute: 20 * 60 }
    }
}

impl EpochWindow {
    pub fn validate(&self) -> Result<()> {
        if self.start_minute >= self.end_minute || self.end_minute > 24 * 60 {
            return Err(IngestError::InvalidWindow(self.start_minute, self.end_minute));
        }
        Ok(())
    }

    pub fn contains(&self, t: &NaiveDateTime) -> bool {
        let minute = t.hour() * 60 + t.minute();
        (self.start_minute..self.end_minute).contains(&minute)
    }

    pub fn len(&self) -> u32 {
        self.end_minute - self.start_minute
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub subject_id: String,
    pub timestamp: NaiveDateTime,
    pub count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeRecord {
    pub edss: f64,
    pub group: u8,
}

/// In-window epoch values per subject, keyed (and ordered) by subject id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochTable {
    pub subjects: BTreeMap<String, Vec<f64>>,
}

const TIMESTAMP_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%d %H:%M:%S"];
const WRITE_FORMAT: &str = "%Y-%m-%dT%H:%M";

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TIMESTAMP_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

fn column(headers: &csv::StringRecord, name: &'static str) -> Result<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or(IngestError::MissingColumn(name))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_value(record: &csv::StringRecord, idx: usize, what: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    let v: f64 = raw.parse().map_err(|_| IngestError::Malformed {
        line: line_of(record),
        message: format!("{what} `{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(IngestError::Malformed { line: line_of(record), message: format!("{what} `{raw}` is not finite") });
    }
    Ok(v)
}

/// Reads every epoch record, in file order.
pub fn read_epoch_records<R: Read>(reader: R) -> Result<Vec<EpochRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (id, ts, count) = (column(&headers, "subject_id")?, column(&headers, "timestamp")?, column(&headers, "count")?);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IngestError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = line_of(&record);
        let subject_id = record.get(id).unwrap_or("").to_string();
        if subject_id.is_empty() {
            return Err(IngestError::Malformed { line, message: "empty subject_id".into() });
        }
        let raw_ts = record.get(ts).unwrap_or("");
        let timestamp = parse_timestamp(raw_ts)
            .ok_or_else(|| IngestError::Malformed { line, message: format!("unrecognized timestamp `{raw_ts}`") })?;
        let count = parse_value(&record, count, "count")?;
        if count < 0.0 {
            return Err(IngestError::Malformed { line, message: format!("negative count {count}") });
        }
        out.push(EpochRecord { subject_id, timestamp, count });
    }
    Ok(out)
}

pub fn read_epochs<R: Read>(reader: R, window: EpochWindow) -> Result<EpochTable> {
    window.validate()?;
    let mut table = EpochTable::default();
    for r in read_epoch_records(reader)? {
        if window.contains(&r.timestamp) {
            table.subjects.entry(r.subject_id).or_default().push(r.count);
        }
    }
    Ok(table)
}

/// Per-subject in-window values from an epoch CSV.
pub fn load_epochs(path: &Path, window: EpochWindow) -> Result<EpochTable> {
    read_epochs(open(path)?, window)
}

/// `x ↦ ln(1 + x)` elementwise.
pub fn apply_log1(values: &[f64]) -> Result<Vec<f64>> {
    values.iter().map(|&v| if v < 0.0 { Err(IngestError::NegativeValue(v)) } else { Ok(v.ln_1p()) }).collect()
}

/// Binary disability label: 1 for EDSS ≥ 4.
pub fn edss_group(edss: f64) -> u8 {
    u8::from(edss >= 4.0)
}

pub fn read_outcomes<R: Read>(reader: R) -> Result<BTreeMap<String, OutcomeRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (id, edss_col) = (column(&headers, "subject_id")?, column(&headers, "edss")?);
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IngestError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = line_of(&record);
        let subject_id = record.get(id).unwrap_or("").to_string();
        let edss = parse_value(&record, edss_col, "edss")?;
        if !(0.0..=10.0).contains(&edss) || (edss * 2.0).fract() != 0.0 {
            return Err(IngestError::Malformed { line, message: format!("edss {edss} is not a half-point score in [0, 10]") });
        }
        if out.insert(subject_id.clone(), OutcomeRecord { edss, group: edss_group(edss) }).is_some() {
            return Err(IngestError::DuplicateSubject(subject_id));
        }
    }
    Ok(out)
}

/// Inner join on subject id. Subjects with fewer than `min_epochs` in-window
/// values are dropped with a warning.
pub fn join_records(
    epochs: &EpochTable,
    outcomes: &BTreeMap<String, OutcomeRecord>,
    min_epochs: usize,
) -> Result<Vec<SubjectSample>> {
    let mut out = Vec::new();
    for (id, values) in &epochs.subjects {
        let Some(o) = outcomes.get(id) else {
            log::warn!("subject {id} has epochs but no outcome; excluded");
            continue;
        };
        if values.len() < min_epochs {
            log::warn!("subject {id} has {} in-window epochs (< {min_epochs}); excluded", values.len());
            continue;
        }
        out.push(SubjectSample {
            subject_id: id.clone(),
            values: values.clone(),
            outcome_binary: Some(o.group),
            outcome_continuous: Some(o.edss),
        });
    }
    for id in outcomes.keys().filter(|id| !epochs.subjects.contains_key(*id)) {
        log::warn!("subject {id} has an outcome but no in-window epochs; excluded");
    }
    if out.is_empty() {
        return Err(IngestError::EmptyJoin);
    }
    Ok(out)
}

pub fn join_outcomes(epochs: &EpochTable, outcome_path: &Path, min_epochs: usize) -> Result<Vec<SubjectSample>> {
    join_records(epochs, &read_outcomes(open(outcome_path)?)?, min_epochs)
}

/// First day of synthetic timestamps.
pub fn synthetic_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date").and_hms_opt(0, 0, 0).expect("valid time")
}

/// Writes subject values as epochs filling the window day after day from
/// `start`, so that `load_epochs` with the same window reads them back.
pub fn write_epochs<W: Write>(out: W, samples: &[SubjectSample], window: EpochWindow, start: NaiveDateTime) -> Result<()> {
    window.validate()?;
    let per_day = window.len() as usize;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "timestamp", "count"])?;
    for s in samples {
        for (j, v) in s.values.iter().enumerate() {
            let day = (j / per_day) as i64;
            let minute = (window.start_minute as usize + j % per_day) as i64;
            let t = start + Duration::days(day) + Duration::minutes(minute);
            w.write_record([s.subject_id.as_str(), &t.format(WRITE_FORMAT).to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_outcomes<W: Write>(out: W, samples: &[SubjectSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "edss"])?;
    for s in samples {
        let edss = s.outcome_continuous.ok_or_else(|| IngestError::MissingOutcome(s.subject_id.clone(), "edss"))?;
        w.write_record([s.subject_id.as_str(), &edss.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Canonical cache format: one `subject_id,value` row per value.
pub fn write_subject_samples<W: Write>(out: W, samples: &[SubjectSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "value"])?;
    for s in samples {
        for v in &s.values {
            w.write_record([s.subject_id.as_str(), &v.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_subject_samples<R: Read>(reader: R) -> Result<EpochTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (id, value) = (column(&headers, "subject_id")?, column(&headers, "value")?);
    let mut table = EpochTable::default();
    for record in rdr.records() {
        let record = record?;
        let v = parse_value(&record, value, "value")?;
        let sid = record.get(id).unwrap_or("").to_string();
        table.subjects.entry(sid).or_default().push(v);
    }
    Ok(table)
}
