//! Glue between records, the model client and the metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Map;
use thiserror::Error;

use crate::client::{InferenceRequest, InferenceResponse, Outcome};
use crate::codec::{decode_seg_target, CodecConfig};
use crate::example::{Task, TaskExample};
use crate::ingest::{IngestError, RawRecord, Record, ScoredObject, SegRecord, TextRecord};
use crate::ink::{CanvasSpec, InkError};
use crate::metrics::{
    classification_accuracy, map_report, round2, CerAccumulator, Detection, ImageBoxes, SegReport, TextReport,
};
use crate::raster::{render, RasterError, RenderOptions};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("line {line}: '{kind}' records cannot be evaluated as {task}")]
    UnsupportedKind { line: usize, kind: String, task: EvalTask },
    #[error("id '{0}' appears more than once in the ground truth")]
    DuplicateId(String),
    #[error("example '{0}' has no ink to render")]
    NoInk(String),
    #[error("example '{id}': {source}")]
    Render {
        id: String,
        #[source]
        source: RasterError,
    },
    #[error(transparent)]
    Geometry(#[from] InkError),
}

/// Metric family selected for an evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Seg,
    Rec,
    Cls,
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalTask::Seg => "seg",
            EvalTask::Rec => "rec",
            EvalTask::Cls => "cls",
        })
    }
}

impl FromStr for EvalTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seg" => Ok(EvalTask::Seg),
            "rec" => Ok(EvalTask::Rec),
            "cls" => Ok(EvalTask::Cls),
            other => Err(format!("unknown eval task '{other}' (expected seg, rec or cls)")),
        }
    }
}

/// Renders an example's ink on a `resolution` square and pairs it with its
/// prompt. The request id is the example's sample id.
pub fn example_request(
    ex: &TaskExample,
    resolution: u32,
    opts: RenderOptions,
) -> Result<InferenceRequest, PipelineError> {
    let id = ex.meta.sample_id.clone();
    let Some(ink) = &ex.ink else {
        return Err(PipelineError::NoInk(id));
    };
    let canvas = CanvasSpec::square(resolution as f64)?;
    let img = render(ink, canvas, opts).map_err(|source| PipelineError::Render { id: id.clone(), source })?;
    Ok(InferenceRequest::new(id, ex.prompt.clone(), &img))
}

fn seg_from_text(id: String, text: &str, cfg: &CodecConfig) -> SegRecord {
    let decoded = decode_seg_target(text, None, cfg);
    SegRecord {
        id,
        level: None,
        objects: decoded
            .objects
            .into_iter()
            .map(|object| ScoredObject { object, score: None })
            .collect(),
        diagnostics: decoded.diagnostics,
        extra: Map::new(),
    }
}

/// A decoded model answer. Failed requests decode to no objects.
pub fn answer_to_seg(resp: &InferenceResponse, cfg: &CodecConfig) -> SegRecord {
    match &resp.outcome {
        Outcome::Answer(a) => seg_from_text(resp.id.clone(), a, cfg),
        Outcome::Error(e) => {
            let mut r = seg_from_text(resp.id.clone(), "", cfg);
            r.extra.insert("error".into(), e.clone().into());
            r
        }
    }
}

/// Reads segmentation records from `seg`, `example` (target) or `answer`
/// lines.
pub fn seg_records(raws: Vec<RawRecord>, cfg: &CodecConfig) -> Result<Vec<SegRecord>, PipelineError> {
    raws.into_iter()
        .map(|raw| match raw.kind.as_str() {
            k if k == SegRecord::KIND => Ok(raw.decode()?),
            k if k == TaskExample::KIND => {
                let ex: TaskExample = raw.decode()?;
                Ok(seg_from_text(ex.meta.sample_id, &ex.target, cfg))
            }
            k if k == InferenceResponse::KIND => Ok(answer_to_seg(&raw.decode()?, cfg)),
            _ => Err(PipelineError::UnsupportedKind {
                line: raw.line,
                kind: raw.kind,
                task: EvalTask::Seg,
            }),
        })
        .collect()
}

/// Reads id/text pairs from `text`, `example` (target) or `answer` lines.
/// Failed requests read as empty text.
pub fn text_records(raws: Vec<RawRecord>, task: EvalTask) -> Result<Vec<TextRecord>, PipelineError> {
    let plain = |id: String, text: String| TextRecord {
        id,
        text,
        extra: Map::new(),
    };
    raws.into_iter()
        .map(|raw| match raw.kind.as_str() {
            k if k == TextRecord::KIND => Ok(raw.decode()?),
            k if k == TaskExample::KIND => {
                let ex: TaskExample = raw.decode()?;
                Ok(plain(ex.meta.sample_id, ex.target))
            }
            k if k == InferenceResponse::KIND => {
                let r: InferenceResponse = raw.decode()?;
                let text = r.answer().unwrap_or_default().to_string();
                Ok(plain(r.id, text))
            }
            _ => Err(PipelineError::UnsupportedKind {
                line: raw.line,
                kind: raw.kind,
                task,
            }),
        })
        .collect()
}

fn index_unique<T>(items: &[T], id: impl Fn(&T) -> &str) -> Result<BTreeMap<&str, &T>, PipelineError> {
    let mut out = BTreeMap::new();
    for it in items {
        if out.insert(id(it), it).is_some() {
            return Err(PipelineError::DuplicateId(id(it).to_string()));
        }
    }
    Ok(out)
}

fn detections(r: &SegRecord) -> Vec<Detection> {
    r.objects
        .iter()
        .map(|o| Detection {
            label: o.object.class.name().to_string(),
            bbox: o.object.bbox.to_bbox(),
            score: o.score.unwrap_or(1.0),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegEvaluation {
    #[serde(flatten)]
    pub report: SegReport,
    /// Prediction ids with no ground truth; their boxes are not scored.
    pub unmatched_ids: Vec<String>,
    pub decode_diagnostics: usize,
}

/// Box mAP of predictions against ground truth, joined on id. A ground-truth
/// page with no prediction contributes only misses.
pub fn evaluate_seg(preds: &[SegRecord], gts: &[SegRecord]) -> Result<SegEvaluation, PipelineError> {
    let gt_index = index_unique(gts, |r| &r.id)?;
    let mut pred_index: BTreeMap<&str, Vec<&SegRecord>> = BTreeMap::new();
    for p in preds {
        pred_index.entry(&p.id).or_default().push(p);
    }
    let images: Vec<ImageBoxes> = gt_index
        .iter()
        .map(|(id, gt)| ImageBoxes {
            image_id: id.to_string(),
            predictions: pred_index
                .get(id)
                .map(|ps| ps.iter().flat_map(|p| detections(p)).collect())
                .unwrap_or_default(),
            ground_truth: gt
                .objects
                .iter()
                .map(|o| (o.object.class.name().to_string(), o.object.bbox.to_bbox()))
                .collect(),
        })
        .collect();
    let unmatched_ids = pred_index
        .keys()
        .filter(|id| !gt_index.contains_key(*id))
        .map(|s| s.to_string())
        .collect();
    Ok(SegEvaluation {
        report: map_report(&images),
        unmatched_ids,
        decode_diagnostics: preds.iter().map(|p| p.diagnostics.len()).sum(),
    })
}

/// CER (recognition only) and exact-match accuracy, joined on id. A
/// reference with no prediction is scored against the empty string.
pub fn evaluate_text(preds: &[TextRecord], refs: &[TextRecord], task: EvalTask) -> Result<TextReport, PipelineError> {
    let ref_index = index_unique(refs, |r| &r.id)?;
    let pred_index = index_unique(preds, |r| &r.id)?;
    let mut acc = CerAccumulator::default();
    let mut pred_texts = Vec::with_capacity(refs.len());
    let mut ref_texts = Vec::with_capacity(refs.len());
    let mut unmatched: BTreeSet<String> = BTreeSet::new();
    for (id, r) in &ref_index {
        let p = match pred_index.get(id) {
            Some(p) => p.text.as_str(),
            None => {
                unmatched.insert(id.to_string());
                ""
            }
        };
        if task == EvalTask::Rec {
            acc.add(p, &r.text);
        }
        pred_texts.push(p);
        ref_texts.push(r.text.as_str());
    }
    unmatched.extend(
        pred_index
            .keys()
            .filter(|id| !ref_index.contains_key(*id))
            .map(|s| s.to_string()),
    );
    let accuracy = (!ref_texts.is_empty())
        .then(|| classification_accuracy(&pred_texts, &ref_texts).map(|a| 100.0 * a))
        .transpose()
        .expect("equal lengths by construction");
    Ok(TextReport {
        samples: ref_texts.len(),
        total_distance: acc.distance,
        total_reference_len: acc.reference_len,
        cer: acc.cer().map(|c| 100.0 * c),
        accuracy,
        unmatched_ids: unmatched.into_iter().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum EvalReport {
    Seg(SegEvaluation),
    Rec(TextReport),
    Cls(TextReport),
}

fn r2(v: Option<f64>) -> Option<f64> {
    v.map(round2)
}

impl EvalReport {
    /// Percent figures rounded to two decimals.
    pub fn rounded(&self) -> Self {
        match self {
            EvalReport::Seg(s) => {
                let mut s = s.clone();
                s.report.map = r2(s.report.map);
                s.report.map50 = r2(s.report.map50);
                for c in &mut s.report.classes {
                    c.map = r2(c.map);
                    c.map50 = r2(c.map50);
                }
                EvalReport::Seg(s)
            }
            EvalReport::Rec(t) | EvalReport::Cls(t) => {
                let mut t = t.clone();
                t.cer = r2(t.cer);
                t.accuracy = r2(t.accuracy);
                if matches!(self, EvalReport::Rec(_)) {
                    EvalReport::Rec(t)
                } else {
                    EvalReport::Cls(t)
                }
            }
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalReport::Seg(s) => {
                writeln!(
                    f,
                    "{:<12} {:>6} {:>6} {:>8} {:>8}",
                    "class", "gt", "pred", "mAP", "mAP@50"
                )?;
                for c in &s.report.classes {
                    writeln!(
                        f,
                        "{:<12} {:>6} {:>6} {:>8} {:>8}",
                        c.class,
                        c.num_gt,
                        c.num_pred,
                        pct(c.map),
                        pct(c.map50)
                    )?;
                }
                write!(
                    f,
                    "{:<12} {:>6} {:>6} {:>8} {:>8}",
                    "all",
                    s.report.num_gt,
                    s.report.num_pred,
                    pct(s.report.map),
                    pct(s.report.map50)
                )
            }
            EvalReport::Rec(t) => write!(
                f,
                "samples {}  CER {}  accuracy {}",
                t.samples,
                pct(t.cer),
                pct(t.accuracy)
            ),
            EvalReport::Cls(t) => write!(f, "samples {}  accuracy {}", t.samples, pct(t.accuracy)),
        }
    }
}

/// Evaluates already-read prediction and ground-truth lines.
pub fn evaluate(
    task: EvalTask,
    preds: Vec<RawRecord>,
    gts: Vec<RawRecord>,
    cfg: &CodecConfig,
) -> Result<EvalReport, PipelineError> {
    Ok(match task {
        EvalTask::Seg => EvalReport::Seg(evaluate_seg(&seg_records(preds, cfg)?, &seg_records(gts, cfg)?)?),
        EvalTask::Rec => EvalReport::Rec(evaluate_text(
            &text_records(preds, task)?,
            &text_records(gts, task)?,
            task,
        )?),
        EvalTask::Cls => EvalReport::Cls(evaluate_text(
            &text_records(preds, task)?,
            &text_records(gts, task)?,
            task,
        )?),
    })
}

/// Metric family that scores an example task.
pub fn eval_task_for(task: Task) -> EvalTask {
    match task {
        Task::Segmentation => EvalTask::Seg,
        Task::Recognition | Task::Math => EvalTask::Rec,
        Task::Classification => EvalTask::Cls,
    }
}
