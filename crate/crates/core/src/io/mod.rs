//! Record types, JSON Lines readers/writers and track assembly.
//!
//! Every parser reports malformed lines as [`Diagnostic`]s instead of
//! silently dropping them; only failures of the underlying stream are fatal.
//! On-disk angles are degrees, in-memory angles radians.

mod ais;
mod detection;
mod states;
mod tracks;

pub use ais::{parse_ais, write_ais, AisRecord, Mmsi, KNOT_MPS};
pub use detection::{parse_detections, write_detections, Detection, DetectionBody, Extent};
pub use states::{parse_track_points, parse_truth, write_track_points, write_truth, TrackPoint, TruthPoint};
pub use tracks::{assemble_tracks, Track, TrackAssembly};

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

/// Parsed records plus diagnostics for the lines that were rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Reads JSON Lines, converting each non-blank line with `convert`.
pub(crate) fn parse_lines<R, W, T, F>(reader: R, convert: F) -> Result<Parsed<T>>
where
    R: BufRead,
    W: DeserializeOwned,
    F: Fn(W) -> Result<T>,
{
    let mut out = Parsed {
        records: Vec::new(),
        diagnostics: Vec::new(),
    };
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<W>(&line)
            .map_err(crate::Error::from)
            .and_then(&convert);
        match parsed {
            Ok(r) => out.records.push(r),
            Err(e) => out.diagnostics.push(Diagnostic {
                line: idx + 1,
                reason: match e {
                    crate::Error::Validation(msg) => msg,
                    other => other.to_string(),
                },
            }),
        }
    }
    Ok(out)
}

/// Reads a whole JSON Lines stream, failing on the first malformed line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            crate::Error::Validation(format!("line {}: {e}", idx + 1))
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
