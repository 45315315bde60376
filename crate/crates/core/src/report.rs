//! Output helpers: deterministic JSON and CSV with a metadata preamble.
//!
//! JSON objects are emitted with sorted keys and every non-integer number
//! printed with 17 significant digits, so identical inputs give byte-identical
//! reports apart from the timestamp.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{Number, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Provenance attached to every output file.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    /// Seconds since the Unix epoch; excluded from reproducibility comparisons.
    pub timestamp: u64,
}

impl Metadata {
    pub fn new(config_bytes: &[u8]) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_bytes),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn normalize(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => match n.as_f64() {
            Some(x) if x.is_finite() => format_float(x)
                .parse::<Number>()
                .map(Value::Number)
                .unwrap_or(Value::Null),
            _ => Value::Null,
        },
        Value::Array(a) => Value::Array(a.into_iter().map(normalize).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, normalize(v))).collect()),
        other => other,
    }
}

fn json_error(e: serde_json::Error) -> Error {
    Error::numerical("cli", format!("JSON serialization failed: {e}"))
}

/// Pretty JSON with sorted keys and fixed-precision floats.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(json_error)?;
    let mut s = serde_json::to_string_pretty(&normalize(v)).map_err(json_error)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    metadata: &'a Metadata,
    report: &'a T,
}

pub fn write_json(path: &Path, meta: &Metadata, report: &impl Serialize) -> Result<()> {
    let text = to_json_string(&Envelope {
        metadata: meta,
        report,
    })?;
    std::fs::write(path, text)?;
    Ok(())
}

/// CSV writer whose file starts with `# key: value` metadata lines.
pub fn csv_writer(path: &Path, meta: &Metadata) -> Result<csv::Writer<std::fs::File>> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# tool: {} {}", meta.tool, meta.version)?;
    writeln!(file, "# config_sha256: {}", meta.config_sha256)?;
    writeln!(file, "# timestamp: {}", meta.timestamp)?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
