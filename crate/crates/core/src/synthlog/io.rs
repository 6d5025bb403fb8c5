//! Newline-delimited JSON log files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::records::CheckRecord;
use crate::error::{Error, Result};

pub const AUCTION_LOG: &str = "auction.ndjson";
pub const UTS_LOG: &str = "uts.ndjson";
pub const URF_LOG: &str = "urf.ndjson";
pub const ACTION_LOG: &str = "action.ndjson";
pub const WORLD_FILE: &str = "world.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Description of one log day written next to the log files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogManifest {
    pub log_date: String,
    pub scale_factor: f64,
    pub n_requests: usize,
    pub seed: u64,
}

impl LogManifest {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Reads the manifest of a log directory; `None` when absent.
    pub fn load(dir: impl AsRef<Path>) -> Result<Option<Self>> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }
}

pub fn write_logs<R: Serialize>(path: impl AsRef<Path>, records: &[R]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_logs<R: DeserializeOwned + CheckRecord>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_lines(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses NDJSON from any reader; blank lines are skipped, line numbers are 1-based.
pub fn parse_lines<R: DeserializeOwned + CheckRecord>(reader: impl BufRead) -> Result<Vec<R>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: R = serde_json::from_str(&line).map_err(|e| classify(lineno, e))?;
        rec.check().map_err(|message| Error::Invariant {
            line: lineno,
            message,
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn classify(line: usize, e: serde_json::Error) -> Error {
    let message = e.to_string();
    if e.is_data() && message.starts_with("missing field") {
        Error::Schema { line, message }
    } else {
        Error::Parse { line, message }
    }
}
