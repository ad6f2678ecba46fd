//! Line-delimited JSON records with a schema version and a kind tag.
//!
//! Every line is an object that starts with `"v"` and `"kind"`, followed by
//! the record's own fields. Fields unknown to this version are carried
//! through unchanged.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{IngestError, PageAnnotation};
use crate::codec::{Diagnostic, SegObject};
use crate::example::TaskExample;

pub const SCHEMA_VERSION: u32 = 1;

/// A type stored as one JSONL line.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

impl Record for TaskExample {
    const KIND: &'static str = "example";
}

impl Record for PageAnnotation {
    const KIND: &'static str = "page";
}

/// A segmentation object with an optional confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredObject {
    #[serde(flatten)]
    pub object: SegObject,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Objects on the target grid for one page, e.g. a decoded model answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
    pub objects: Vec<ScoredObject>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Record for SegRecord {
    const KIND: &'static str = "seg";
}

/// A bare id/text pair, e.g. a transcription or a class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Record for TextRecord {
    const KIND: &'static str = "text";
}

/// A version-checked line whose kind is not yet known.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    /// 1-based.
    pub line: usize,
    pub kind: String,
    pub body: Map<String, Value>,
}

impl RawRecord {
    pub fn decode<T: Record>(self) -> Result<T, IngestError> {
        if self.kind != T::KIND {
            return Err(IngestError::WrongKind {
                line: self.line,
                expected: T::KIND,
                found: self.kind,
            });
        }
        serde_json::from_value(Value::Object(self.body)).map_err(|e| IngestError::BadRecord {
            line: self.line,
            message: e.to_string(),
        })
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<RawRecord, IngestError> {
    let bad = |message: String| IngestError::BadRecord { line: line_no, message };
    let value: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    let Value::Object(mut body) = value else {
        return Err(bad("record is not a JSON object".into()));
    };
    match body.shift_remove("v") {
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(other) => {
            return Err(IngestError::Version {
                line: line_no,
                found: other.to_string(),
                expected: SCHEMA_VERSION,
            })
        }
        None => {
            return Err(IngestError::Version {
                line: line_no,
                found: "none".into(),
                expected: SCHEMA_VERSION,
            })
        }
    }
    let kind = match body.shift_remove("kind") {
        Some(Value::String(s)) => s,
        _ => return Err(bad("missing string field 'kind'".into())),
    };
    Ok(RawRecord {
        line: line_no,
        kind,
        body,
    })
}

/// Reads every non-blank line as a versioned record of any kind.
pub fn read_raw_records(reader: impl BufRead) -> Result<Vec<RawRecord>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: "<stream>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(i + 1, &line)?);
    }
    Ok(out)
}

pub fn read_jsonl_from<T: Record>(reader: impl BufRead) -> Result<Vec<T>, IngestError> {
    read_raw_records(reader)?.into_iter().map(RawRecord::decode).collect()
}

pub fn read_jsonl<T: Record>(path: &Path) -> Result<Vec<T>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_jsonl_from(BufReader::new(file)).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

fn to_line<T: Record>(record: &T) -> Result<String, IngestError> {
    let value = serde_json::to_value(record).map_err(|e| IngestError::BadRecord {
        line: 0,
        message: e.to_string(),
    })?;
    let Value::Object(body) = value else {
        return Err(IngestError::BadRecord {
            line: 0,
            message: format!("{} records must serialize to objects", T::KIND),
        });
    };
    let mut out = Map::with_capacity(body.len() + 2);
    out.insert("v".into(), Value::from(SCHEMA_VERSION));
    out.insert("kind".into(), Value::from(T::KIND));
    out.extend(body);
    Ok(Value::Object(out).to_string())
}

pub fn write_jsonl_to<'a, T: Record + 'a>(
    mut writer: impl Write,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<(), IngestError> {
    for r in records {
        writeln!(writer, "{}", to_line(r)?).map_err(IngestError::Write)?;
    }
    writer.flush().map_err(IngestError::Write)
}

pub fn write_jsonl<'a, T: Record + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_jsonl_to(BufWriter::new(file), records)
}
