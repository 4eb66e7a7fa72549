use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, AnchorGrid, BBox};
use crate::numerics::Tensor;

use super::assign::decode_deltas;

/// One scored, classified box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            score_thresh: 0.5,
            nms_iou: 0.5,
        }
    }
}

/// Greedy NMS over pre-sorted candidates. `order` must be score-descending;
/// returns kept positions into `boxes`. A box is suppressed when its IOU
/// with an already-kept box strictly exceeds `iou_thresh`.
pub fn greedy_nms(boxes: &[BBox], order: &[usize], iou_thresh: f64) -> Vec<usize> {
    let mut keep = Vec::new();
    let mut suppressed = vec![false; boxes.len()];
    for &i in order {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in order {
            if !suppressed[j] && j != i && iou(&boxes[i], &boxes[j]) > iou_thresh {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Independent reference NMS: repeatedly scan for the highest-scoring
/// unsuppressed box instead of walking a pre-sorted order. Used as the
/// oracle in tests and the acceptance suite.
pub fn brute_force_nms(boxes: &[BBox], scores: &[f64], iou_thresh: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len());
    let mut state = vec![0u8; boxes.len()]; // 0 = open, 1 = kept, 2 = suppressed
    let mut keep = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if state[i] == 0 && best.map_or(true, |b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        state[b] = 1;
        keep.push(b);
        for i in 0..boxes.len() {
            if state[i] == 0 && iou(&boxes[b], &boxes[i]) > iou_thresh {
                state[i] = 2;
            }
        }
    }
    keep
}

/// Decode head outputs into detections: softmax per anchor, per-class score
/// threshold, clip to the image, then greedy per-class NMS. Output is sorted
/// by descending score (ties by class then anchor index).
pub fn decode_and_nms(
    cls_logits: &Tensor,
    reg_preds: &Tensor,
    grid: &AnchorGrid,
    num_classes: usize,
    cfg: &InferenceConfig,
    image_w: usize,
    image_h: usize,
) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&cfg.score_thresh) || !(0.0..=1.0).contains(&cfg.nms_iou) {
        return Err(Error::InvalidArg(format!(
            "inference thresholds must be in [0, 1], got score {} nms {}",
            cfg.score_thresh, cfg.nms_iou
        )));
    }
    let (w, h, k) = (grid.feat_w, grid.feat_h, grid.k());
    let n_cls = num_classes + 1;
    if cls_logits.dims() != [w, h, k * n_cls] || reg_preds.dims() != [w, h, k * 4] {
        return Err(Error::shape(
            "decode_and_nms",
            format!("[{w}, {h}, {}] logits and [{w}, {h}, {}] regs", k * n_cls, k * 4),
            format!("{:?} and {:?}", cls_logits.dims(), reg_preds.dims()),
        ));
    }

    // Candidates per class: (anchor index, box, score).
    let mut per_class: Vec<Vec<(usize, BBox, f64)>> = vec![Vec::new(); num_classes];
    let mut probs = vec![0.0f64; n_cls];
    for ai in 0..grid.num_anchors() {
        let cell = ai / k;
        let kk = ai % k;
        let base = cell * (k * n_cls) + kk * n_cls;
        let logits = &cls_logits.data()[base..base + n_cls];
        let max_logit = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (c, &l) in logits.iter().enumerate() {
            probs[c] = (l - max_logit).exp();
            denom += probs[c];
        }
        for p in probs.iter_mut() {
            *p /= denom;
        }

        if probs[1..].iter().all(|&p| p <= cfg.score_thresh) {
            continue;
        }
        let rbase = cell * (k * 4) + kk * 4;
        let r = &reg_preds.data()[rbase..rbase + 4];
        let deltas = [r[0], r[1], r[2], r[3]];
        let Ok(decoded) = decode_deltas(&deltas, &grid.anchors()[ai]) else {
            continue;
        };
        let Some(clipped) = decoded.clipped(image_w as f64, image_h as f64) else {
            continue;
        };
        for c in 0..num_classes {
            let score = probs[c + 1];
            if score > cfg.score_thresh {
                per_class[c].push((ai, clipped, score));
            }
        }
    }

    let mut detections = Vec::new();
    for (c, candidates) in per_class.into_iter().enumerate() {
        if candidates.is_empty() {
            continue;
        }
        let boxes: Vec<BBox> = candidates.iter().map(|(_, b, _)| *b).collect();
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            candidates[b].2.partial_cmp(&candidates[a].2).unwrap().then(candidates[a].0.cmp(&candidates[b].0))
        });
        for idx in greedy_nms(&boxes, &order, cfg.nms_iou) {
            let (_, bbox, score) = candidates[idx];
            detections.push(Detection {
                bbox: BBox { class_id: c, ..bbox },
                class_id: c,
                score,
            });
        }
    }
    detections.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.class_id.cmp(&b.class_id))
    });
    Ok(detections)
}

/// Write detections as JSON lines:
/// `{"image_id": ..., "class_id": ..., "score": ..., "x1": ..., ...}`.
pub fn write_detections_jsonl(path: &Path, per_image: &[(String, Vec<Detection>)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (image_id, dets) in per_image {
        for d in dets {
            let line = serde_json::json!({
                "image_id": image_id,
                "class_id": d.class_id,
                "score": d.score,
                "x1": d.bbox.x1,
                "y1": d.bbox.y1,
                "x2": d.bbox.x2,
                "y2": d.bbox.y2,
            });
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
