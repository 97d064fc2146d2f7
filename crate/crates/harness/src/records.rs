//! Stream records and their CSV / JSONL encodings.
//!
//! CSV files need a header. A `label` column holds an integer class, columns
//! named `target` or `target_<i>` form the regression target (header order),
//! an optional `timestamp` column holds a non-negative integer, and every
//! other column is a feature. Empty label/target cells mean "unlabeled".
//!
//! JSONL files hold one object per line:
//! `{"features": [..], "label": 1}` or `{"features": [..], "target": [..]}`,
//! both with an optional `"timestamp"`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Target(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub features: Vec<f64>,
    pub label: Option<Label>,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl` / `.ndjson` are JSONL, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            _ => Err(format!("unknown format {s:?} (expected csv or jsonl)")),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Data { line: Some(line), message: message.into() }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data { line: None, message: format!("{}: {e}", path.display()) }
}

/// Checks that every record has the same feature dimension and label kind.
#[derive(Debug, Default)]
struct SchemaGuard {
    dim: Option<usize>,
    last_timestamp: Option<u64>,
}

impl SchemaGuard {
    fn check(&mut self, line: usize, r: &StreamRecord) -> Result<(), HarnessError> {
        match self.dim {
            None => self.dim = Some(r.features.len()),
            Some(d) if d != r.features.len() => {
                return Err(HarnessError::Schema {
                    line,
                    message: format!("expected {d} features, found {}", r.features.len()),
                })
            }
            _ => {}
        }
        if let Some(ts) = r.timestamp {
            if self.last_timestamp.is_some_and(|prev| ts < prev) {
                return Err(HarnessError::Schema { line, message: format!("timestamp {ts} goes backwards") });
            }
            self.last_timestamp = Some(ts);
        }
        if r.features.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(line, "non-finite feature"));
        }
        Ok(())
    }
}

enum Column {
    Feature,
    Label,
    Target,
    Timestamp,
}

/// Lazy CSV reader; yields records in file order.
pub struct CsvRecords {
    reader: csv::Reader<File>,
    columns: Vec<Column>,
    guard: SchemaGuard,
    row: csv::StringRecord,
}

impl CsvRecords {
    pub fn open(path: &Path) -> Result<Self, HarnessError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
        let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
        let columns: Vec<Column> = header
            .iter()
            .map(|h| match h {
                "label" => Column::Label,
                "timestamp" => Column::Timestamp,
                h if h == "target" || h.starts_with("target_") => Column::Target,
                _ => Column::Feature,
            })
            .collect();
        if !columns.iter().any(|c| matches!(c, Column::Feature)) {
            return Err(HarnessError::Schema { line: 1, message: "header declares no feature columns".into() });
        }
        let has_label = columns.iter().any(|c| matches!(c, Column::Label));
        let has_target = columns.iter().any(|c| matches!(c, Column::Target));
        if has_label && has_target {
            return Err(HarnessError::Schema { line: 1, message: "header has both label and target columns".into() });
        }
        Ok(Self { reader, columns, guard: SchemaGuard::default(), row: csv::StringRecord::new() })
    }

    fn parse_row(&self, line: usize) -> Result<StreamRecord, HarnessError> {
        let mut features = Vec::new();
        let mut label = None;
        let mut target: Vec<Option<f64>> = Vec::new();
        let mut timestamp = None;
        for (i, (col, cell)) in self.columns.iter().zip(self.row.iter()).enumerate() {
            let num = |what: &str| {
                cell.parse::<f64>().map_err(|_| parse_err(line, format!("column {}: {what} {cell:?} is not a number", i + 1)))
            };
            match col {
                Column::Feature => features.push(num("feature")?),
                Column::Label if cell.is_empty() => {}
                Column::Label => {
                    let c = cell
                        .parse::<usize>()
                        .map_err(|_| parse_err(line, format!("column {}: label {cell:?} is not a class index", i + 1)))?;
                    label = Some(Label::Class(c));
                }
                Column::Target if cell.is_empty() => target.push(None),
                Column::Target => target.push(Some(num("target")?)),
                Column::Timestamp => {
                    timestamp = Some(cell.parse::<u64>().map_err(|_| {
                        parse_err(line, format!("column {}: timestamp {cell:?} is not a non-negative integer", i + 1))
                    })?)
                }
            }
        }
        if !target.is_empty() {
            if target.iter().all(Option::is_some) {
                label = Some(Label::Target(target.into_iter().flatten().collect()));
            } else if target.iter().any(Option::is_some) {
                return Err(parse_err(line, "partially empty target"));
            }
        }
        Ok(StreamRecord { features, label, timestamp })
    }
}

impl Iterator for CsvRecords {
    type Item = Result<StreamRecord, HarnessError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.reader.read_record(&mut self.row) {
            Ok(false) => None,
            Ok(true) => {
                let line = self.row.position().map_or(0, |p| p.line() as usize);
                Some(self.parse_row(line).and_then(|r| self.guard.check(line, &r).map(|_| r)))
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Some(Err(parse_err(line, e.to_string())))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
}

/// Lazy JSONL reader; blank lines are skipped.
pub struct JsonlRecords {
    lines: std::io::Lines<BufReader<File>>,
    line: usize,
    guard: SchemaGuard,
}

impl JsonlRecords {
    pub fn open(path: &Path) -> Result<Self, HarnessError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        Ok(Self { lines: BufReader::new(file).lines(), line: 0, guard: SchemaGuard::default() })
    }
}

impl Iterator for JsonlRecords {
    type Item = Result<StreamRecord, HarnessError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = self.lines.next()?;
            self.line += 1;
            let line = self.line;
            let text = match text {
                Ok(t) => t,
                Err(e) => return Some(Err(parse_err(line, e.to_string()))),
            };
            if text.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<JsonRecord>(&text)
                .map_err(|e| parse_err(line, e.to_string()))
                .and_then(|j| {
                    let label = match (j.label, j.target) {
                        (Some(_), Some(_)) => return Err(parse_err(line, "record has both label and target")),
                        (Some(c), None) => Some(Label::Class(c)),
                        (None, Some(t)) => Some(Label::Target(t)),
                        (None, None) => None,
                    };
                    Ok(StreamRecord { features: j.features, label, timestamp: j.timestamp })
                })
                .and_then(|r| self.guard.check(line, &r).map(|_| r));
            return Some(parsed);
        }
    }
}

/// Opens `path` as a lazy record stream.
pub fn ingest(path: &Path, format: Format) -> Result<Box<dyn Iterator<Item = Result<StreamRecord, HarnessError>>>, HarnessError> {
    Ok(match format {
        Format::Csv => Box::new(CsvRecords::open(path)?),
        Format::Jsonl => Box::new(JsonlRecords::open(path)?),
    })
}

/// Reads the whole stream, optionally z-scoring it with statistics from the
/// first `warmup` records.
pub fn load(path: &Path, format: Format, warmup: Option<usize>) -> Result<Vec<StreamRecord>, HarnessError> {
    let records = ingest(path, format)?;
    match warmup {
        Some(n) => ZScored::new(records, n)?.collect(),
        None => records.collect(),
    }
}

/// Per-feature z-score statistics. Constant features get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ZScore {
    pub fn fit(records: &[StreamRecord]) -> Option<Self> {
        let first = records.first()?;
        let n = records.len() as f64;
        let dim = first.features.len();
        let mut mean = vec![0.0; dim];
        for r in records {
            for (m, x) in mean.iter_mut().zip(&r.features) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in records {
            for ((v, x), m) in var.iter_mut().zip(&r.features).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let sd = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Some(Self { mean, sd })
    }

    pub fn apply(&self, r: &mut StreamRecord) {
        for ((x, m), s) in r.features.iter_mut().zip(&self.mean).zip(&self.sd) {
            *x = (*x - m) / s;
        }
    }
}

/// Buffers the warmup prefix, fits [`ZScore`] on it, then yields every record
/// (warmup included) normalized.
pub struct ZScored<I> {
    buffered: std::vec::IntoIter<StreamRecord>,
    rest: I,
    stats: Option<ZScore>,
}

impl<I: Iterator<Item = Result<StreamRecord, HarnessError>>> ZScored<I> {
    pub fn new(mut rest: I, warmup: usize) -> Result<Self, HarnessError> {
        let mut prefix = Vec::with_capacity(warmup);
        for r in rest.by_ref().take(warmup) {
            prefix.push(r?);
        }
        let stats = ZScore::fit(&prefix);
        Ok(Self { buffered: prefix.into_iter(), rest, stats })
    }

    pub fn stats(&self) -> Option<&ZScore> {
        self.stats.as_ref()
    }
}

impl<I: Iterator<Item = Result<StreamRecord, HarnessError>>> Iterator for ZScored<I> {
    type Item = Result<StreamRecord, HarnessError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut r = match self.buffered.next() {
            Some(r) => r,
            None => match self.rest.next()? {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            },
        };
        if let Some(s) = &self.stats {
            s.apply(&mut r);
        }
        Some(Ok(r))
    }
}

pub fn write_csv(path: &Path, records: &[StreamRecord]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let dim = records.first().map_or(0, |r| r.features.len());
    let mut header: Vec<String> = vec!["timestamp".into()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    match records.iter().find_map(|r| r.label.as_ref()) {
        Some(Label::Class(_)) => header.push("label".into()),
        Some(Label::Target(t)) if t.len() == 1 => header.push("target".into()),
        Some(Label::Target(t)) => header.extend((0..t.len()).map(|i| format!("target_{i}"))),
        None => {}
    }
    let label_cols = header.len() - 1 - dim;
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for r in records {
        let mut row: Vec<String> = vec![r.timestamp.map_or(String::new(), |t| t.to_string())];
        row.extend(r.features.iter().map(|x| format!("{x:?}")));
        match &r.label {
            Some(Label::Class(c)) => row.push(c.to_string()),
            Some(Label::Target(t)) => row.extend(t.iter().map(|x| format!("{x:?}"))),
            None => row.extend(std::iter::repeat_n(String::new(), label_cols)),
        }
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_jsonl(path: &Path, records: &[StreamRecord]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let (label, target) = match &r.label {
            Some(Label::Class(c)) => (Some(*c), None),
            Some(Label::Target(t)) => (None, Some(t.clone())),
            None => (None, None),
        };
        let j = JsonRecord { features: r.features.clone(), label, target, timestamp: r.timestamp };
        serde_json::to_writer(&mut w, &j).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write(path: &Path, format: Format, records: &[StreamRecord]) -> Result<(), HarnessError> {
    match format {
        Format::Csv => write_csv(path, records),
        Format::Jsonl => write_jsonl(path, records),
    }
}
