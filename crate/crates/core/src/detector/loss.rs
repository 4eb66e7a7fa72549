use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AnchorGrid;
use crate::numerics::Tensor;
use crate::rng::Rng;

use super::assign::{AnchorLabel, TargetAssignment};

/// Anchor sampling for the per-image detection loss: up to
/// `max_samples * pos_fraction` positives, the rest filled with negatives.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub max_samples: usize,
    pub pos_fraction: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            max_samples: 64,
            pos_fraction: 0.25,
        }
    }
}

/// Loss value plus gradients at the two head outputs.
#[derive(Debug, Clone)]
pub struct DetectionLossResult {
    pub loss: f64,
    pub grad_cls: Tensor,
    pub grad_reg: Tensor,
    pub n_sampled: usize,
}

const SMOOTH_L1_BETA: f64 = 1.0;

fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < SMOOTH_L1_BETA {
        0.5 * x * x / SMOOTH_L1_BETA
    } else {
        a - 0.5 * SMOOTH_L1_BETA
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < SMOOTH_L1_BETA {
        x / SMOOTH_L1_BETA
    } else {
        x.signum()
    }
}

/// Softmax cross-entropy over (num_classes + 1) labels on sampled anchors
/// plus smooth-L1 on positives' regression deltas, normalized by the number
/// of sampled anchors. Internal class labels put background at index 0 and
/// object class `c` at `c + 1`.
pub fn detection_loss(
    cls_logits: &Tensor,
    reg_preds: &Tensor,
    assignment: &TargetAssignment,
    grid: &AnchorGrid,
    num_classes: usize,
    sampling: &SamplingConfig,
    rng: &mut Rng,
) -> Result<DetectionLossResult> {
    let (w, h, k) = (grid.feat_w, grid.feat_h, grid.k());
    let n_cls = num_classes + 1;
    if cls_logits.dims() != [w, h, k * n_cls] {
        return Err(Error::shape(
            "detection_loss",
            format!("cls logits [{w}, {h}, {}]", k * n_cls),
            format!("{:?}", cls_logits.dims()),
        ));
    }
    if reg_preds.dims() != [w, h, k * 4] {
        return Err(Error::shape(
            "detection_loss",
            format!("reg preds [{w}, {h}, {}]", k * 4),
            format!("{:?}", reg_preds.dims()),
        ));
    }
    if assignment.labels.len() != grid.num_anchors() {
        return Err(Error::shape(
            "detection_loss",
            format!("{} anchor labels", grid.num_anchors()),
            format!("{}", assignment.labels.len()),
        ));
    }

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (ai, label) in assignment.labels.iter().enumerate() {
        match label {
            AnchorLabel::Positive { .. } => positives.push(ai),
            AnchorLabel::Negative => negatives.push(ai),
            AnchorLabel::Ignore => {}
        }
    }

    let max_pos = ((sampling.max_samples as f64) * sampling.pos_fraction).round() as usize;
    let n_pos = positives.len().min(max_pos);
    let pos_picks = rng.sample_indices(positives.len(), n_pos);
    let n_neg = negatives.len().min(sampling.max_samples - n_pos);
    let neg_picks = rng.sample_indices(negatives.len(), n_neg);

    let mut grad_cls = Tensor::zeros(cls_logits.dims());
    let mut grad_reg = Tensor::zeros(reg_preds.dims());
    let n_sampled = n_pos + n_neg;
    if n_sampled == 0 {
        return Ok(DetectionLossResult {
            loss: 0.0,
            grad_cls,
            grad_reg,
            n_sampled,
        });
    }
    let inv_n = 1.0 / n_sampled as f64;

    // Anchor flat index -> (cell offset, k slot).
    let cell_of = |ai: usize| (ai / k, ai % k);

    let mut loss = 0.0;
    let mut probs = vec![0.0f64; n_cls];
    let mut sampled: Vec<(usize, usize)> = Vec::with_capacity(n_sampled);
    for &p in &pos_picks {
        let ai = positives[p];
        let target = match assignment.labels[ai] {
            AnchorLabel::Positive { class_id, .. } => class_id + 1,
            _ => unreachable!(),
        };
        sampled.push((ai, target));
    }
    for &p in &neg_picks {
        sampled.push((negatives[p], 0));
    }

    for &(ai, target) in &sampled {
        let (cell, kk) = cell_of(ai);
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
        loss += -(probs[target].max(1e-300)).ln();
        let g = &mut grad_cls.data_mut()[base..base + n_cls];
        for c in 0..n_cls {
            g[c] = (probs[c] - if c == target { 1.0 } else { 0.0 }) * inv_n;
        }

        if target > 0 {
            let rbase = cell * (k * 4) + kk * 4;
            let preds = &reg_preds.data()[rbase..rbase + 4];
            let targets = &assignment.reg_targets[ai];
            let mut g_reg = [0.0f64; 4];
            for d in 0..4 {
                let diff = preds[d] - targets[d];
                loss += smooth_l1(diff);
                g_reg[d] = smooth_l1_grad(diff) * inv_n;
            }
            grad_reg.data_mut()[rbase..rbase + 4].copy_from_slice(&g_reg);
        }
    }

    Ok(DetectionLossResult {
        loss: loss * inv_n,
        grad_cls,
        grad_reg,
        n_sampled,
    })
}
