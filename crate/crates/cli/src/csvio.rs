//! CSV tables and measurement files.
//!
//! Every emitted table starts with `#` comment lines: a title line carrying
//! the table name and schema version, a one-line description, then one line
//! per column giving its name, unit and meaning. The CSV header row follows.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use forcegp::gp::{Channel, MeasurementSet};
use forcegp::oscillator::ResponseKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TABLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: &'static str,
    pub unit: &'static str,
    pub doc: &'static str,
}

pub const fn col(name: &'static str, unit: &'static str, doc: &'static str) -> Column {
    Column { name, unit, doc }
}

/// A tidy table ready to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub description: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: impl Into<String>, description: impl Into<String>, columns: Vec<Column>) -> Self {
        Self {
            file: file.into(),
            description: description.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Appends rows from equally long numeric columns.
    pub fn push_columns(&mut self, cols: &[&[f64]]) {
        let n = cols.first().map_or(0, |c| c.len());
        for i in 0..n {
            self.push(cols.iter().map(|c| num(c[i])).collect());
        }
    }

    pub fn header_names(&self) -> Vec<&'static str> {
        self.columns.iter().map(|c| c.name).collect()
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Summary of a written file, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WrittenTable {
    pub file: String,
    pub schema_version: u32,
    pub description: String,
    pub columns: Vec<String>,
    pub rows: usize,
    pub sha256: String,
}

pub fn write_table(dir: &Path, table: &Table) -> CliResult<WrittenTable> {
    let path = dir.join(&table.file);
    let mut buf: Vec<u8> = Vec::new();
    let stem = table.file.trim_end_matches(".csv");
    writeln!(buf, "# forcegp table {stem} v{TABLE_SCHEMA_VERSION}").unwrap();
    writeln!(buf, "# {}", table.description).unwrap();
    for c in &table.columns {
        if c.unit.is_empty() {
            writeln!(buf, "# {}: {}", c.name, c.doc).unwrap();
        } else {
            writeln!(buf, "# {} [{}]: {}", c.name, c.unit, c.doc).unwrap();
        }
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(table.header_names())
            .and_then(|_| table.rows.iter().try_for_each(|r| w.write_record(r)))
            .map_err(|e| CliError::data(&path, e.to_string()))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    let mut f = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
    f.write_all(&buf)
        .and_then(|_| f.flush())
        .map_err(|e| CliError::io(&path, e))?;
    Ok(WrittenTable {
        file: table.file.clone(),
        schema_version: TABLE_SCHEMA_VERSION,
        description: table.description.clone(),
        columns: table.header_names().iter().map(|s| s.to_string()).collect(),
        rows: table.rows.len(),
        sha256: hex::encode(Sha256::digest(&buf)),
    })
}

/// Time and value column names for one response type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnPair {
    pub time: String,
    pub value: String,
}

impl ColumnPair {
    fn new(time: &str, value: &str) -> Self {
        Self {
            time: time.into(),
            value: value.into(),
        }
    }
}

/// Which CSV columns hold which response type.
///
/// With `require_all` unset, a type whose two columns are both absent from the
/// file is skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub disp: Option<ColumnPair>,
    pub vel: Option<ColumnPair>,
    pub acc: Option<ColumnPair>,
    #[serde(default = "yes")]
    pub require_all: bool,
}

fn yes() -> bool {
    true
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            disp: Some(ColumnPair::new("t_disp", "disp")),
            vel: Some(ColumnPair::new("t_vel", "vel")),
            acc: Some(ColumnPair::new("t_acc", "acc")),
            require_all: false,
        }
    }
}

impl ColumnSpec {
    fn pair(&self, kind: ResponseKind) -> Option<&ColumnPair> {
        match kind {
            ResponseKind::Disp => self.disp.as_ref(),
            ResponseKind::Vel => self.vel.as_ref(),
            ResponseKind::Acc => self.acc.as_ref(),
        }
    }
}

/// Reads per-type `(time, value)` columns into a measurement set.
///
/// Channels may differ in length; a channel ends at its first row where both
/// of its cells are empty, and every later row must leave it empty too.
pub fn ingest_csv(path: &Path, spec: &ColumnSpec) -> CliResult<MeasurementSet> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(file);
    let headers = rdr.headers().map_err(|e| CliError::data(path, e.to_string()))?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let mut plan: Vec<(ResponseKind, &ColumnPair, usize, usize)> = Vec::new();
    for kind in ResponseKind::ALL {
        let Some(pair) = spec.pair(kind) else { continue };
        match (index.get(pair.time.as_str()), index.get(pair.value.as_str())) {
            (Some(&ti), Some(&vi)) => plan.push((kind, pair, ti, vi)),
            (None, None) if !spec.require_all => {}
            (t, _) => {
                let absent = if t.is_none() { &pair.time } else { &pair.value };
                return Err(CliError::data(path, format!("declared column '{absent}' is missing")));
            }
        }
    }
    if plan.is_empty() {
        return Err(CliError::data(path, "no measurement columns found"));
    }

    let mut cols: Vec<(Vec<f64>, Vec<f64>, bool)> = vec![(Vec::new(), Vec::new(), false); plan.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::data(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        for ((kind, pair, ti, vi), (ts, vs, ended)) in plan.iter().zip(cols.iter_mut()) {
            let (tc, vc) = (rec.get(*ti).unwrap_or(""), rec.get(*vi).unwrap_or(""));
            if tc.is_empty() && vc.is_empty() {
                *ended = true;
                continue;
            }
            if *ended {
                return Err(CliError::data(
                    path,
                    format!("line {line}: {} data resumes after a blank row", kind.name()),
                ));
            }
            let parse = |cell: &str, name: &str| -> CliResult<f64> {
                let v: f64 = cell.parse().map_err(|_| {
                    CliError::data(path, format!("line {line}, column '{name}': cannot parse '{cell}'"))
                })?;
                if !v.is_finite() {
                    return Err(CliError::data(
                        path,
                        format!("line {line}, column '{name}': non-finite value '{cell}'"),
                    ));
                }
                Ok(v)
            };
            let t = parse(tc, &pair.time)?;
            let v = parse(vc, &pair.value)?;
            if let Some(&prev) = ts.last() {
                if t <= prev {
                    return Err(CliError::data(
                        path,
                        format!(
                            "line {line}, column '{}': time {t} does not increase (previous {prev})",
                            pair.time
                        ),
                    ));
                }
            }
            ts.push(t);
            vs.push(v);
        }
    }

    let mut set = MeasurementSet::empty();
    for ((kind, pair, ..), (ts, vs, _)) in plan.iter().zip(cols) {
        if ts.is_empty() {
            if spec.require_all {
                return Err(CliError::data(path, format!("column '{}' has no data", pair.value)));
            }
            continue;
        }
        set.insert(
            *kind,
            Channel::new(ts, vs).map_err(|e| CliError::data(path, e.to_string()))?,
        );
    }
    if set.is_empty() {
        return Err(CliError::data(path, "no measurement rows found"));
    }
    Ok(set)
}

/// Measurement set as a table in the default ingest layout; shorter channels
/// are padded with empty cells.
pub fn measurement_table(file: &str, set: &MeasurementSet) -> Table {
    let mut columns = Vec::new();
    let mut chans = Vec::new();
    for kind in set.kinds() {
        let (tn, vn, unit) = match kind {
            ResponseKind::Disp => ("t_disp", "disp", "m"),
            ResponseKind::Vel => ("t_vel", "vel", "m/s"),
            ResponseKind::Acc => ("t_acc", "acc", "m/s^2"),
        };
        columns.push(col(tn, "s", "sample time"));
        columns.push(col(vn, unit, "measured value"));
        chans.push(set.channel(kind).unwrap());
    }
    let mut table = Table::new(
        file,
        "Training measurements, one time column per response type.",
        columns,
    );
    let rows = chans.iter().map(|c| c.times.len()).max().unwrap_or(0);
    for i in 0..rows {
        let mut row = Vec::with_capacity(2 * chans.len());
        for c in &chans {
            if i < c.times.len() {
                row.push(num(c.times[i]));
                row.push(num(c.values[i]));
            } else {
                row.push(String::new());
                row.push(String::new());
            }
        }
        table.push(row);
    }
    table
}
