//! Inference post-processing and the detection evaluation protocol:
//! greedy NMS, score-ordered IoU matching, average precision over the
//! precision-recall envelope, and the mean over classes.

use serde::{Deserialize, Serialize};

use crate::boxes::{iou, BoxXYWH};
use crate::error::{Error, Result};

/// One scored box emitted by the detector for one image.
#[derive(Debug, Clone, Copy)]
pub struct Detection {
    pub bbox: BoxXYWH,
    pub score: f64,
    pub class_id: usize,
    pub image_id: usize,
    /// Source anchor; breaks score ties deterministically.
    pub anchor_id: usize,
}

/// Descending score, ties to the lower anchor id, then lower image id.
fn rank_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.anchor_id.cmp(&b.anchor_id))
        .then(a.image_id.cmp(&b.image_id))
}

/// Greedy non-maximum suppression: walk detections by descending score and
/// keep one iff its IoU with every already-kept detection is below the
/// threshold. Output order is keep order.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Result<Vec<Detection>> {
    let mut sorted: Vec<Detection> = dets.to_vec();
    sorted.sort_by(rank_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let mut suppressed = false;
        for k in &kept {
            if iou(&d.bbox, &k.bbox)? >= iou_thr {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(d);
        }
    }
    Ok(kept)
}

/// A detection with its matched/unmatched verdict for one image.
#[derive(Debug, Clone, Copy)]
pub struct MatchedDetection {
    pub score: f64,
    pub image_id: usize,
    pub anchor_id: usize,
    pub true_positive: bool,
}

/// Matches one image's detections against its ground truth. Detections are
/// processed in descending score; each is a true positive iff its best-IoU
/// still-unmatched ground-truth box reaches the threshold (and that box is
/// then consumed). Double detections of one box count as false positives.
pub fn match_detections(
    dets: &[Detection],
    gts: &[BoxXYWH],
    iou_thr: f64,
) -> Result<Vec<MatchedDetection>> {
    let mut sorted: Vec<Detection> = dets.to_vec();
    sorted.sort_by(rank_order);
    let mut gt_taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(sorted.len());
    for d in sorted {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let v = iou(&d.bbox, gt)?;
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        let tp = match best {
            Some((gi, v)) if v >= iou_thr => {
                gt_taken[gi] = true;
                true
            }
            _ => false,
        };
        out.push(MatchedDetection {
            score: d.score,
            image_id: d.image_id,
            anchor_id: d.anchor_id,
            true_positive: tp,
        });
    }
    Ok(out)
}

/// How the precision envelope is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Area under the full precision envelope (the default).
    AllPoints,
    /// Mean of the envelope sampled at recalls 0.0, 0.1, ..., 1.0.
    ElevenPoint,
}

#[derive(Debug, Clone)]
pub struct ApCurve {
    pub ap: f64,
    pub precision_points: Vec<f64>,
    pub recall_points: Vec<f64>,
    pub tp: usize,
    pub fp: usize,
}

/// Average precision over all images' matched detections for one class.
/// Precision at each rank is TP/(TP+FP); recall is TP over the ground-truth
/// count; the envelope replaces precision at recall r by the maximum
/// precision at any recall >= r.
pub fn average_precision(
    matches: &[MatchedDetection],
    gt_count: usize,
    interp: Interpolation,
) -> Result<ApCurve> {
    if gt_count == 0 {
        return Err(Error::ZeroGroundTruth);
    }
    let mut sorted: Vec<MatchedDetection> = matches.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.image_id.cmp(&b.image_id))
            .then(a.anchor_id.cmp(&b.anchor_id))
    });

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut precision = Vec::with_capacity(sorted.len());
    let mut recall = Vec::with_capacity(sorted.len());
    for m in &sorted {
        if m.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / gt_count as f64);
    }

    let mut envelope = precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }

    let ap = match interp {
        Interpolation::AllPoints => {
            let mut area = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&envelope) {
                area += (r - prev_recall) * p;
                prev_recall = *r;
            }
            area
        }
        Interpolation::ElevenPoint => {
            let mut total = 0.0;
            for step in 0..=10 {
                let r = step as f64 / 10.0;
                let best = recall
                    .iter()
                    .zip(&envelope)
                    .filter(|(rr, _)| **rr >= r - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0f64, f64::max);
                total += best;
            }
            total / 11.0
        }
    };

    Ok(ApCurve {
        ap,
        precision_points: precision,
        recall_points: recall,
        tp,
        fp,
    })
}

/// Arithmetic mean of per-class average precisions.
pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::InvalidConfig(
            "mean average precision over an empty class set".to_string(),
        ));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Full evaluation summary. `map` is always recomputable as the mean of the
/// stored per-class `ap` values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub ap: Vec<f64>,
    pub map: f64,
    pub precision_points: Vec<f64>,
    pub recall_points: Vec<f64>,
    pub tp: usize,
    pub fp: usize,
    pub iou_threshold: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Internal consistency: the stored mean matches the stored per-class values.
    pub fn is_consistent(&self) -> bool {
        match mean_ap(&self.ap) {
            Ok(m) => (m - self.map).abs() <= 1e-12 && self.k == self.ap.len(),
            Err(_) => false,
        }
    }
}

/// Single-class evaluation over per-image (detections, ground truth) pairs.
pub fn evaluate_single_class(
    per_image: &[(Vec<Detection>, Vec<BoxXYWH>)],
    iou_thr: f64,
    interp: Interpolation,
) -> Result<EvalReport> {
    let mut matches = Vec::new();
    let mut gt_count = 0usize;
    for (dets, gts) in per_image {
        gt_count += gts.len();
        matches.extend(match_detections(dets, gts, iou_thr)?);
    }
    let curve = average_precision(&matches, gt_count, interp)?;
    let map = mean_ap(&[curve.ap])?;
    Ok(EvalReport {
        k: 1,
        ap: vec![curve.ap],
        map,
        precision_points: curve.precision_points,
        recall_points: curve.recall_points,
        tp: curve.tp,
        fp: curve.fp,
        iou_threshold: iou_thr,
    })
}
