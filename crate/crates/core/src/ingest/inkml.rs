use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use roxmltree::{Document, Node};

use super::IngestError;
use crate::ink::{Ink, Point};

/// Spacing of synthesized timestamps when a file carries none (100 Hz).
pub const SYNTHETIC_SAMPLE_PERIOD: f64 = 0.01;

/// A labelled group of strokes (`<traceGroup>`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceGroup {
    pub annotations: BTreeMap<String, String>,
    /// Indices into the ink's strokes.
    pub strokes: Vec<usize>,
}

/// One `<ink>` element.
#[derive(Debug, Clone, PartialEq)]
pub struct InkmlDocument {
    pub ink: Ink,
    /// `<annotation type="...">` children of `<ink>`, keyed by type.
    pub annotations: BTreeMap<String, String>,
    pub groups: Vec<TraceGroup>,
    /// Timestamps were missing and generated at [`SYNTHETIC_SAMPLE_PERIOD`].
    pub synthesized_time: bool,
    /// Traces that were skipped, with the reason.
    pub diagnostics: Vec<String>,
}

pub fn read_inkml(path: &Path) -> Result<Vec<InkmlDocument>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_inkml(&text, path)
}

/// Parses InkML text; `origin` is only used in error messages.
pub fn parse_inkml(text: &str, origin: &Path) -> Result<Vec<InkmlDocument>, IngestError> {
    let doc = Document::parse(text).map_err(|e| {
        let pos = e.pos();
        IngestError::Xml {
            path: origin.to_path_buf(),
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let inks: Vec<Node> = doc
        .descendants()
        .filter(|n| n.is_element() && n.tag_name().name() == "ink")
        .collect();
    if inks.is_empty() {
        return Err(IngestError::NoTraces {
            path: origin.to_path_buf(),
        });
    }
    inks.into_iter().map(|n| parse_ink(n, origin.to_path_buf())).collect()
}

fn channel_layout(ink: Node) -> (usize, usize, Option<usize>) {
    let format = ink
        .descendants()
        .find(|n| n.is_element() && n.tag_name().name() == "traceFormat");
    let Some(format) = format else {
        return (0, 1, Some(2));
    };
    let names: Vec<String> = format
        .children()
        .filter(|n| n.is_element() && n.tag_name().name() == "channel")
        .filter_map(|n| n.attribute("name").map(|s| s.to_ascii_uppercase()))
        .collect();
    let find = |c: &str| names.iter().position(|n| n == c);
    match (find("X"), find("Y")) {
        (Some(x), Some(y)) => (x, y, find("T")),
        _ => (0, 1, Some(2)),
    }
}

fn element_id<'a>(n: Node<'a, '_>) -> Option<&'a str> {
    n.attribute(("http://www.w3.org/XML/1998/namespace", "id"))
        .or_else(|| n.attribute("id"))
}

fn annotations_of(n: Node) -> BTreeMap<String, String> {
    n.children()
        .filter(|c| c.is_element() && c.tag_name().name() == "annotation")
        .map(|c| {
            (
                c.attribute("type").unwrap_or("").to_string(),
                c.text().unwrap_or("").trim().to_string(),
            )
        })
        .collect()
}

fn parse_ink(ink_node: Node, path: PathBuf) -> Result<InkmlDocument, IngestError> {
    let (xi, yi, ti) = channel_layout(ink_node);
    let mut diagnostics = Vec::new();
    let mut raw: Vec<Vec<(f64, f64, Option<f64>)>> = Vec::new();
    let mut ids: BTreeMap<String, usize> = BTreeMap::new();

    let traces = ink_node
        .descendants()
        .filter(|n| n.is_element() && n.tag_name().name() == "trace");
    for (k, trace) in traces.enumerate() {
        let label = element_id(trace)
            .map(|s| format!("trace '{s}'"))
            .unwrap_or_else(|| format!("trace #{k}"));
        let text = trace.text().unwrap_or("");
        let mut points = Vec::new();
        let mut problem = None;
        for (j, chunk) in text.split(',').enumerate() {
            let chunk = chunk.trim();
            if chunk.is_empty() {
                continue;
            }
            let vals: Result<Vec<f64>, _> = chunk.split_whitespace().map(str::parse::<f64>).collect();
            let Ok(vals) = vals else {
                problem = Some(format!("{label}: unsupported value in point {j}: '{chunk}'"));
                break;
            };
            let (Some(&x), Some(&y)) = (vals.get(xi), vals.get(yi)) else {
                problem = Some(format!("{label}: point {j} is missing coordinates"));
                break;
            };
            points.push((x, y, ti.and_then(|t| vals.get(t).copied())));
        }
        if let Some(p) = problem {
            diagnostics.push(p);
            continue;
        }
        if points.is_empty() {
            diagnostics.push(format!("{label}: no points"));
            continue;
        }
        if let Some(id) = element_id(trace) {
            ids.insert(id.to_string(), raw.len());
        }
        raw.push(points);
    }
    if raw.is_empty() {
        return Err(IngestError::NoTraces { path });
    }

    let synthesized_time = raw.iter().flatten().any(|p| p.2.is_none());
    let mut counter = 0usize;
    let strokes: Vec<Vec<Point>> = raw
        .into_iter()
        .map(|pts| {
            pts.into_iter()
                .map(|(x, y, t)| {
                    let t = if synthesized_time {
                        counter as f64 * SYNTHETIC_SAMPLE_PERIOD
                    } else {
                        t.unwrap_or_default()
                    };
                    counter += 1;
                    Point::new(x, y, t)
                })
                .collect()
        })
        .collect();
    let ink = Ink::from_capture(strokes)?;

    let groups = ink_node
        .descendants()
        .filter(|n| n.is_element() && n.tag_name().name() == "traceGroup")
        .map(|g| TraceGroup {
            annotations: annotations_of(g),
            strokes: g
                .children()
                .filter(|c| c.is_element() && c.tag_name().name() == "traceView")
                .filter_map(|c| c.attribute("traceDataRef"))
                .filter_map(|r| ids.get(r.trim_start_matches('#')).copied())
                .collect(),
        })
        .collect();

    Ok(InkmlDocument {
        ink,
        annotations: annotations_of(ink_node),
        groups,
        synthesized_time,
        diagnostics,
    })
}
