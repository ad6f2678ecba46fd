use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{IngestError, SYNTHETIC_SAMPLE_PERIOD};
use crate::ink::{Ink, Point};

/// A labelled sketch from a QuickDraw-style file.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub ink: Ink,
    pub label: String,
    pub key_id: Option<String>,
    pub synthesized_time: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineDiagnostic {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SketchSet {
    pub sketches: Vec<Sketch>,
    pub diagnostics: Vec<LineDiagnostic>,
}

#[derive(Deserialize)]
struct RawSketch {
    word: String,
    drawing: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    key_id: Option<Value>,
}

/// Reads one sketch per line: `{"word": ..., "drawing": [[xs, ys, ts?], ...]}`.
/// Timestamps are milliseconds and are converted to seconds. Bad lines are
/// skipped and reported.
pub fn read_ndjson_sketches(path: &Path) -> Result<SketchSet, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ndjson_sketches(std::io::BufReader::new(file)).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_ndjson_sketches(reader: impl BufRead) -> Result<SketchSet, std::io::Error> {
    let mut out = SketchSet::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(s) => out.sketches.push(s),
            Err(message) => out.diagnostics.push(LineDiagnostic { line: i + 1, message }),
        }
    }
    Ok(out)
}

fn parse_line(line: &str) -> Result<Sketch, String> {
    let raw: RawSketch = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let has_time = raw.drawing.iter().all(|s| s.len() >= 3);
    let mut counter = 0usize;
    let mut strokes = Vec::with_capacity(raw.drawing.len());
    for (k, s) in raw.drawing.iter().enumerate() {
        if s.len() < 2 {
            return Err(format!("stroke {k} lacks x or y"));
        }
        let n = s[0].len();
        if s[1].len() != n || (has_time && s[2].len() != n) {
            return Err(format!("stroke {k} has mismatched channel lengths"));
        }
        let pts = (0..n)
            .map(|j| {
                let t = if has_time {
                    s[2][j] / 1000.0
                } else {
                    counter as f64 * SYNTHETIC_SAMPLE_PERIOD
                };
                counter += 1;
                Point::new(s[0][j], s[1][j], t)
            })
            .collect();
        strokes.push(pts);
    }
    let ink = Ink::from_capture(strokes).map_err(|e| e.to_string())?;
    Ok(Sketch {
        ink,
        label: raw.word,
        key_id: raw.key_id.map(|v| match v {
            Value::String(s) => s,
            other => other.to_string(),
        }),
        synthesized_time: !has_time,
    })
}
