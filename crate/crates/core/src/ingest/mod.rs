//! Reading public ink formats, the internal JSONL interchange format, and
//! dataset statistics.

mod inkml;
mod jsonl;
mod ndjson;
mod page;
mod stats;

use std::path::PathBuf;

use thiserror::Error;

use crate::ink::InkError;

pub use inkml::{parse_inkml, read_inkml, InkmlDocument, TraceGroup, SYNTHETIC_SAMPLE_PERIOD};
pub use jsonl::{
    read_jsonl, read_jsonl_from, read_raw_records, write_jsonl, write_jsonl_to, RawRecord, Record, ScoredObject,
    SegRecord, TextRecord, SCHEMA_VERSION,
};
pub use ndjson::{parse_ndjson_sketches, read_ndjson_sketches, LineDiagnostic, Sketch, SketchSet};
pub use page::{PageAnnotation, PageObject};
pub use stats::{compute_stats, ClassStats, DatasetStats};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed XML at line {line}, column {column}: {message}", path.display())]
    Xml {
        path: PathBuf,
        line: u32,
        column: u32,
        message: String,
    },
    #[error("{}: no usable traces", path.display())]
    NoTraces { path: PathBuf },
    #[error("line {line}: schema version {found} is not supported (expected {expected})")]
    Version { line: usize, found: String, expected: u32 },
    #[error("line {line}: expected a '{expected}' record, found '{found}'")]
    WrongKind {
        line: usize,
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("write failed: {0}")]
    Write(#[source] std::io::Error),
    #[error(transparent)]
    Ink(#[from] InkError),
    #[error("object {index} ({class}) lies outside the page ink")]
    ObjectOutsidePage { index: usize, class: String },
}
