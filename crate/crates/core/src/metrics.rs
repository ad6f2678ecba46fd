//! Character error rate, classification accuracy and COCO-style box mAP.
//!
//! Box matching follows the COCO evaluator for axis-aligned boxes with no
//! crowd regions and no per-image detection cap:
//!
//! * each class is evaluated on its own;
//! * within an image, detections are visited by descending score (stable on
//!   input order) and each takes the unmatched ground truth with the highest
//!   IoU at or above the threshold (lowest index on ties);
//! * detections of all images are then ranked by score (stable on input
//!   order) to form the precision/recall curve;
//! * AP is the mean of interpolated precision at recall 0.00, 0.01, ..., 1.00,
//!   where interpolated precision at `r` is the best precision reached at any
//!   recall of at least `r`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::codec::SegClass;
use crate::ink::BBox;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

pub const RECALL_POINTS: u32 = 101;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("{preds} predictions for {refs} references")]
    LengthMismatch { preds: usize, refs: usize },
}

fn nfc_chars(s: &str) -> Vec<char> {
    s.nfc().collect()
}

/// Levenshtein distance over NFC-normalized Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    levenshtein(&nfc_chars(a), &nfc_chars(b))
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Number of NFC scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.nfc().count()
}

/// Single-sample CER as a fraction.
pub fn cer(pred: &str, reference: &str) -> Result<f64, MetricsError> {
    let r = nfc_chars(reference);
    if r.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(levenshtein(&nfc_chars(pred), &r) as f64 / r.len() as f64)
}

/// Micro-averaged corpus CER: total edits over total reference length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CerAccumulator {
    pub samples: usize,
    pub distance: usize,
    pub reference_len: usize,
}

impl CerAccumulator {
    pub fn add(&mut self, pred: &str, reference: &str) {
        let r = nfc_chars(reference);
        self.distance += levenshtein(&nfc_chars(pred), &r);
        self.reference_len += r.len();
        self.samples += 1;
    }

    pub fn merge(&mut self, other: &CerAccumulator) {
        self.samples += other.samples;
        self.distance += other.distance;
        self.reference_len += other.reference_len;
    }

    /// `None` while no reference characters have been seen.
    pub fn cer(&self) -> Option<f64> {
        (self.reference_len > 0).then(|| self.distance as f64 / self.reference_len as f64)
    }
}

fn normalize_label(s: &str) -> String {
    s.trim().nfc().collect()
}

/// Fraction of exact matches after trimming and NFC normalization.
pub fn classification_accuracy<P: AsRef<str>, R: AsRef<str>>(preds: &[P], refs: &[R]) -> Result<f64, MetricsError> {
    if preds.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            refs: refs.len(),
        });
    }
    if refs.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(refs)
        .filter(|(p, r)| normalize_label(p.as_ref()) == normalize_label(r.as_ref()))
        .count();
    Ok(hits as f64 / refs.len() as f64)
}

/// Intersection over union; zero for disjoint or zero-area unions.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// A scored box prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub bbox: BBox,
    pub score: f64,
}

/// Returns detection indices in ranking order: descending score, input
/// order on ties.
fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching within one image. Returns, per detection (input order),
/// whether it matched a ground truth.
fn match_image(dets: &[(&BBox, f64)], gts: &[&BBox], threshold: f64) -> Vec<bool> {
    let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
    let mut taken = vec![false; gts.len()];
    let mut matched = vec![false; dets.len()];
    for d in rank_by_score(&scores) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(dets[d].0, gt);
            if v >= threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched[d] = true;
        }
    }
    matched
}

/// Area under the interpolated precision/recall curve from a ranked list of
/// TP/FP flags. `None` when there is no ground truth.
fn ap_from_ranked(tp_flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let n = tp_flags.len();
    let mut tp = vec![0usize; n];
    let mut precision = vec![0.0f64; n];
    let mut acc = 0usize;
    for (k, &hit) in tp_flags.iter().enumerate() {
        acc += usize::from(hit);
        tp[k] = acc;
        precision[k] = acc as f64 / (k + 1) as f64;
    }
    // Precision envelope, non-increasing in rank.
    for k in (1..n).rev() {
        if precision[k - 1] < precision[k] {
            precision[k - 1] = precision[k];
        }
    }
    let mut sum = 0.0;
    let mut k = 0;
    for r in 0..RECALL_POINTS as usize {
        // First rank whose recall tp/n_gt reaches r/100, compared exactly.
        while k < n && tp[k] * 100 < r * n_gt {
            k += 1;
        }
        if k == n {
            break;
        }
        sum += precision[k];
    }
    Some(sum / RECALL_POINTS as f64)
}

/// AP of one class on one image.
pub fn average_precision(preds: &[Detection], gts: &[BBox], iou_threshold: f64) -> Option<f64> {
    let dets: Vec<(&BBox, f64)> = preds.iter().map(|d| (&d.bbox, d.score)).collect();
    let gt_refs: Vec<&BBox> = gts.iter().collect();
    let matched = match_image(&dets, &gt_refs, iou_threshold);
    let scores: Vec<f64> = preds.iter().map(|d| d.score).collect();
    let ranked: Vec<bool> = rank_by_score(&scores).into_iter().map(|i| matched[i]).collect();
    ap_from_ranked(&ranked, gts.len())
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageBoxes {
    pub image_id: String,
    pub predictions: Vec<Detection>,
    pub ground_truth: Vec<(String, BBox)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub num_gt: usize,
    pub num_pred: usize,
    /// AP per threshold of [`coco_thresholds`], fraction scale. Empty when
    /// the class has no ground truth.
    pub ap: Vec<f64>,
    /// Mean AP over thresholds, percent.
    pub map: Option<f64>,
    /// AP at IoU 0.50, percent.
    pub map50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SegReport {
    pub classes: Vec<ClassReport>,
    /// Mean over classes with ground truth, percent.
    pub map: Option<f64>,
    pub map50: Option<f64>,
    pub num_gt: usize,
    pub num_pred: usize,
    /// Prediction labels outside the known vocabulary; their boxes only
    /// ever count as false positives.
    pub unknown_labels: Vec<String>,
}

/// Per-class and aggregate mAP over a set of images.
pub fn map_report(images: &[ImageBoxes]) -> SegReport {
    let mut classes: BTreeSet<&str> = BTreeSet::new();
    let mut unknown: BTreeSet<String> = BTreeSet::new();
    for img in images {
        classes.extend(img.ground_truth.iter().map(|(c, _)| c.as_str()));
        for d in &img.predictions {
            classes.insert(&d.label);
            if d.label.parse::<SegClass>().is_err() {
                unknown.insert(d.label.clone());
            }
        }
    }
    let thresholds = coco_thresholds();
    let mut report = SegReport {
        unknown_labels: unknown.into_iter().collect(),
        ..Default::default()
    };

    for class in classes {
        let mut ranked_scores: Vec<f64> = Vec::new();
        let mut per_threshold_flags: Vec<Vec<bool>> = vec![Vec::new(); thresholds.len()];
        let mut n_gt = 0;
        for img in images {
            let dets: Vec<(&BBox, f64)> = img
                .predictions
                .iter()
                .filter(|d| d.label == class)
                .map(|d| (&d.bbox, d.score))
                .collect();
            let gts: Vec<&BBox> = img
                .ground_truth
                .iter()
                .filter(|(c, _)| c == class)
                .map(|(_, b)| b)
                .collect();
            n_gt += gts.len();
            for (t, &thr) in thresholds.iter().enumerate() {
                per_threshold_flags[t].extend(match_image(&dets, &gts, thr));
            }
            ranked_scores.extend(dets.iter().map(|d| d.1));
        }
        let order = rank_by_score(&ranked_scores);
        let ap: Vec<f64> = per_threshold_flags
            .iter()
            .filter_map(|flags| {
                let ranked: Vec<bool> = order.iter().map(|&i| flags[i]).collect();
                ap_from_ranked(&ranked, n_gt)
            })
            .collect();
        let (map, map50) = if ap.is_empty() {
            (None, None)
        } else {
            (
                Some(100.0 * ap.iter().sum::<f64>() / ap.len() as f64),
                Some(100.0 * ap[0]),
            )
        };
        report.num_gt += n_gt;
        report.num_pred += ranked_scores.len();
        report.classes.push(ClassReport {
            class: class.to_string(),
            num_gt: n_gt,
            num_pred: ranked_scores.len(),
            ap,
            map,
            map50,
        });
    }

    let scored: Vec<&ClassReport> = report.classes.iter().filter(|c| c.map.is_some()).collect();
    if !scored.is_empty() {
        let n = scored.len() as f64;
        report.map = Some(scored.iter().filter_map(|c| c.map).sum::<f64>() / n);
        report.map50 = Some(scored.iter().filter_map(|c| c.map50).sum::<f64>() / n);
    }
    report
}

/// Recognition and classification report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TextReport {
    pub samples: usize,
    pub total_distance: usize,
    pub total_reference_len: usize,
    /// Corpus CER, percent.
    pub cer: Option<f64>,
    /// Exact-match accuracy, percent.
    pub accuracy: Option<f64>,
    /// Ids present on one side only.
    pub unmatched_ids: Vec<String>,
}

/// Percent values rounded to two decimals, as reported in tables.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Per-class counts for quick inspection.
pub fn class_counts(images: &[ImageBoxes]) -> BTreeMap<String, (usize, usize)> {
    let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for img in images {
        for (c, _) in &img.ground_truth {
            out.entry(c.clone()).or_default().0 += 1;
        }
        for d in &img.predictions {
            out.entry(d.label.clone()).or_default().1 += 1;
        }
    }
    out
}
