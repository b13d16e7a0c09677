//! CSV and JSON serialization plus run manifests.
//!
//! Numbers go to CSV as `{:.16e}` (17 significant digits, exact round trip).
//! JSON uses serde_json's shortest round-trip representation; non-finite
//! values become `null` there.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::risk_lab::hex;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Numeric columns read from a headed CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: usize,
    columns: BTreeMap<String, Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| Error::InvalidArgument(format!("input has no column {name:?} (header: {})", self.headers.join(","))))
    }
}

pub fn read_table(path: &Path, wanted: &[&str]) -> Result<Table> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_table_from(file, wanted).map_err(|e| match e {
        Error::Io(msg) => Error::Io(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parse the `wanted` columns that are present; other columns are ignored.
/// A header row is mandatory and malformed rows are reported by line number.
pub fn read_table_from<R: Read>(reader: R, wanted: &[&str]) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers().map_err(|e| Error::Io(e.to_string()))?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Io("missing header row".into()));
    }
    if headers.iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(Error::Io(format!("header row required, first line is numeric: {}", headers.join(","))));
    }
    let index: Vec<(String, usize)> = wanted
        .iter()
        .filter_map(|w| headers.iter().position(|h| h == w).map(|i| (w.to_string(), i)))
        .collect();
    let mut columns: BTreeMap<String, Vec<f64>> = index.iter().map(|(n, _)| (n.clone(), Vec::new())).collect();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Io(format!("line {line}: malformed row ({e})"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (name, i) in &index {
            let field = record.get(*i).unwrap_or("");
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Io(format!("line {line}: column {name:?}: cannot parse {field:?} as a number")))?;
            columns.get_mut(name).expect("column registered").push(v);
        }
        rows += 1;
    }
    Ok(Table { headers, rows, columns })
}

/// `{:.16e}` for finite values, `inf`, `-inf` and `NaN` otherwise.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| Error::Io(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Provenance record written next to every output set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Arguments that reproduce the run, with the seed made explicit.
    pub argv: Vec<String>,
    /// Resolved flag values.
    pub flags: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: Vec<String>, flags: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            argv,
            flags,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn file_name(subcommand: &str) -> String {
        format!("{subcommand}.manifest.json")
    }
}
