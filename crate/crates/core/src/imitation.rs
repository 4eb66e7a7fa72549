//! Masked feature-imitation loss and the adaptation layer in front of it.
//!
//! The student's guided feature map is passed through a 3x3 same-padding
//! convolution that maps student channels to teacher channels, then pulled
//! toward the teacher response on masked locations only:
//!
//! ```text
//! L_imitation = 1/(2 N_p) * sum_ij sum_c I_ij (adapted_ijc - teacher_ijc)^2
//! ```
//!
//! The teacher is a constant; no gradient flows into it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::ImitationMask;
use crate::numerics::{conv_backward, conv_forward, LayerGrads, LayerParams, Tensor};

/// How the imitation region is produced during distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Adaptive IOU thresholding at F = psi * M.
    Adaptive,
    /// Directly scaled ground-truth boxes (comparison baseline).
    GtProjection,
}

/// Distillation settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Imitation loss weight (lambda).
    pub lambda: f64,
    /// Thresholding factor forwarded to mask estimation.
    pub psi: f64,
    pub mask_mode: MaskMode,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lambda: 1.0,
            psi: 0.5,
            mask_mode: MaskMode::Adaptive,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidArg(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.psi) {
            return Err(Error::InvalidArg(format!("psi must be in [0, 1], got {}", self.psi)));
        }
        Ok(())
    }
}

/// 3x3 stride-1 convolution mapping student channels to teacher channels.
/// Trained jointly with the student and dropped at inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationLayer {
    pub params: LayerParams,
}

impl AdaptationLayer {
    pub fn init(c_student: usize, c_teacher: usize, seed: u64) -> Result<AdaptationLayer> {
        Ok(AdaptationLayer {
            params: LayerParams::init_he(3, 3, c_student, c_teacher, seed)?,
        })
    }

    pub fn c_student(&self) -> usize {
        self.params.cin()
    }

    pub fn c_teacher(&self) -> usize {
        self.params.cout()
    }
}

/// Forward through the adaptation layer; spatial dims are preserved.
pub fn adapt(student_feat: &Tensor, layer: &AdaptationLayer) -> Result<Tensor> {
    conv_forward(student_feat, &layer.params, 1)
}

/// Backward through the adaptation layer: returns the gradient at the
/// student feature plus the layer's parameter gradients.
pub fn adapt_backward(student_feat: &Tensor, layer: &AdaptationLayer, upstream: &Tensor) -> Result<(Tensor, LayerGrads)> {
    conv_backward(student_feat, &layer.params, 1, upstream)
}

/// Masked squared-error imitation loss and its gradient w.r.t. the adapted
/// student feature. `N_p = 0` yields zero loss and zero gradient.
pub fn imitation_loss(adapted: &Tensor, teacher: &Tensor, mask: &ImitationMask) -> Result<(f64, Tensor)> {
    if adapted.dims() != teacher.dims() {
        return Err(Error::shape(
            "imitation_loss",
            format!("{:?}", teacher.dims()),
            format!("{:?}", adapted.dims()),
        ));
    }
    if adapted.dims().len() != 3 {
        return Err(Error::shape("imitation_loss", "[W, H, C] features", format!("{:?}", adapted.dims())));
    }
    let (w, h, c) = (adapted.dims()[0], adapted.dims()[1], adapted.dims()[2]);
    if (mask.w, mask.h) != (w, h) {
        return Err(Error::shape(
            "imitation_loss",
            format!("{w}x{h} mask"),
            format!("{}x{}", mask.w, mask.h),
        ));
    }

    let n_p = mask.n_positive();
    let mut grad = Tensor::zeros(adapted.dims());
    if n_p == 0 {
        return Ok((0.0, grad));
    }

    let inv_np = 1.0 / n_p as f64;
    let a = adapted.data();
    let t = teacher.data();
    let g = grad.data_mut();
    let mut sum_sq = 0.0;
    for i in 0..w {
        for j in 0..h {
            if !mask.get(i, j) {
                continue;
            }
            let base = (i * h + j) * c;
            for cc in 0..c {
                let diff = a[base + cc] - t[base + cc];
                sum_sq += diff * diff;
                g[base + cc] = diff * inv_np;
            }
        }
    }
    Ok((0.5 * inv_np * sum_sq, grad))
}

/// The three loss terms of one training step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_gt: f64,
    pub l_imitation: f64,
    pub l_total: f64,
}

/// Combine detection and imitation losses: `L = L_gt + lambda * L_imitation`.
pub fn total_loss(l_gt: f64, l_imitation: f64, cfg: &DistillConfig) -> Result<LossBreakdown> {
    if !l_gt.is_finite() || !l_imitation.is_finite() {
        return Err(Error::NonFinite(format!("total_loss inputs (l_gt={l_gt}, l_imitation={l_imitation})")));
    }
    let l_total = l_gt + cfg.lambda * l_imitation;
    if !l_total.is_finite() {
        return Err(Error::NonFinite(format!("total_loss result {l_total}")));
    }
    Ok(LossBreakdown {
        l_gt,
        l_imitation,
        l_total,
    })
}
