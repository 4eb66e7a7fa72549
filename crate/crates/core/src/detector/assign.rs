use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{iou, AnchorGrid, BBox};

/// IOU thresholds for anchor labeling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AssignThresholds {
    pub pos_iou: f64,
    pub neg_iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive { class_id: usize, gt_index: usize },
    Negative,
    Ignore,
}

/// Per-anchor labels and regression targets, indexed by
/// `AnchorGrid::index(i, j, k)`. Regression targets are only meaningful at
/// positive anchors.
#[derive(Debug, Clone)]
pub struct TargetAssignment {
    pub labels: Vec<AnchorLabel>,
    pub reg_targets: Vec<[f64; 4]>,
}

impl TargetAssignment {
    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| matches!(l, AnchorLabel::Positive { .. })).count()
    }
}

/// Box-delta encoding of a ground truth relative to an anchor:
/// `(tx, ty, tw, th) = ((gx-ax)/aw, (gy-ay)/ah, ln(gw/aw), ln(gh/ah))`.
pub fn encode_deltas(gt: &BBox, anchor: &BBox) -> [f64; 4] {
    let (gx, gy) = gt.center();
    let (ax, ay) = anchor.center();
    [
        (gx - ax) / anchor.width(),
        (gy - ay) / anchor.height(),
        (gt.width() / anchor.width()).ln(),
        (gt.height() / anchor.height()).ln(),
    ]
}

/// Inverse of [`encode_deltas`]. Size deltas are clamped to |t| <= 8 so a
/// wild regression output cannot overflow.
pub fn decode_deltas(deltas: &[f64; 4], anchor: &BBox) -> Result<BBox> {
    let (ax, ay) = anchor.center();
    let cx = ax + deltas[0] * anchor.width();
    let cy = ay + deltas[1] * anchor.height();
    let w = anchor.width() * deltas[2].clamp(-8.0, 8.0).exp();
    let h = anchor.height() * deltas[3].clamp(-8.0, 8.0).exp();
    BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

/// Standard anchor assignment: positive above `pos_iou` (matched to the
/// argmax gt) or as a gt's best anchor; negative below `neg_iou`; ignore in
/// between. Ties break toward the lowest index; gts with zero max IOU get
/// no forced anchor.
pub fn assign_targets(grid: &AnchorGrid, gts: &[BBox], thresholds: &AssignThresholds) -> TargetAssignment {
    let n = grid.num_anchors();
    let mut labels = vec![AnchorLabel::Negative; n];
    let mut reg_targets = vec![[0.0; 4]; n];
    if gts.is_empty() {
        return TargetAssignment { labels, reg_targets };
    }

    // IOU of every anchor against every gt.
    let mut best_gt = vec![0usize; n];
    let mut best_iou = vec![0.0f64; n];
    let mut gt_best_anchor = vec![0usize; gts.len()];
    let mut gt_best_iou = vec![0.0f64; gts.len()];
    for (ai, anchor) in grid.anchors().iter().enumerate() {
        for (gi, gt) in gts.iter().enumerate() {
            let v = iou(anchor, gt);
            if v > best_iou[ai] {
                best_iou[ai] = v;
                best_gt[ai] = gi;
            }
            if v > gt_best_iou[gi] {
                gt_best_iou[gi] = v;
                gt_best_anchor[gi] = ai;
            }
        }
    }

    for ai in 0..n {
        labels[ai] = if best_iou[ai] > thresholds.pos_iou {
            AnchorLabel::Positive {
                class_id: gts[best_gt[ai]].class_id,
                gt_index: best_gt[ai],
            }
        } else if best_iou[ai] < thresholds.neg_iou {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
    }

    // Argmax fallback: every gt with any overlap claims its best anchor.
    for (gi, gt) in gts.iter().enumerate() {
        if gt_best_iou[gi] > 0.0 {
            labels[gt_best_anchor[gi]] = AnchorLabel::Positive {
                class_id: gt.class_id,
                gt_index: gi,
            };
        }
    }

    for ai in 0..n {
        if let AnchorLabel::Positive { gt_index, .. } = labels[ai] {
            reg_targets[ai] = encode_deltas(&gts[gt_index], &grid.anchors()[ai]);
        }
    }
    TargetAssignment { labels, reg_targets }
}
