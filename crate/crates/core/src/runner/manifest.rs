//! The per-run CSV manifest.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::EndReason;
use crate::experience::{Outcome, PoolCap};

pub const MANIFEST_COLUMNS: [&str; 18] = [
    "run_id",
    "scenario",
    "arm",
    "embedder",
    "pool_cap",
    "rep",
    "seed",
    "composite",
    "detected",
    "diagnosis_credit",
    "fixed",
    "no_regressions",
    "retrieval_used",
    "channel_disagreement",
    "framework_error",
    "outcome",
    "end_reason",
    "wall_ticks",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub run_id: String,
    pub scenario: String,
    pub arm: String,
    pub embedder: String,
    pub pool_cap: PoolCap,
    pub rep: u32,
    pub seed: u64,
    pub composite: f64,
    pub detected: u8,
    pub diagnosis_credit: f64,
    pub fixed: u8,
    pub no_regressions: u8,
    pub retrieval_used: bool,
    pub channel_disagreement: bool,
    pub framework_error: bool,
    pub outcome: Outcome,
    pub end_reason: EndReason,
    pub wall_ticks: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("manifest header does not match the expected columns")]
    Header,
}

pub fn write_manifest<W: Write>(out: W, rows: &[ManifestRow]) -> Result<(), ManifestError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(MANIFEST_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn manifest_to_string(rows: &[ManifestRow]) -> String {
    let mut buf = Vec::new();
    write_manifest(&mut buf, rows).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn read_manifest<R: io::Read>(input: R) -> Result<Vec<ManifestRow>, ManifestError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(MANIFEST_COLUMNS) {
        return Err(ManifestError::Header);
    }
    r.deserialize().map(|row| row.map_err(ManifestError::from)).collect()
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRow>, ManifestError> {
    read_manifest(File::open(path)?)
}

/// Appends rows one at a time, writing the header first if the file is new
/// or empty.
pub struct ManifestAppender {
    w: csv::Writer<File>,
}

impl ManifestAppender {
    pub fn open(path: &Path) -> Result<Self, ManifestError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            w.write_record(MANIFEST_COLUMNS)?;
            w.flush()?;
        }
        Ok(ManifestAppender { w })
    }

    pub fn append(&mut self, row: &ManifestRow) -> Result<(), ManifestError> {
        self.w.serialize(row)?;
        self.w.flush()?;
        Ok(())
    }
}
