//! Desk-scale single-stage anchor-based detector with a class-aware head.
//!
//! The backbone is a stack of plain 3x3 conv + ReLU stages; enough of them
//! run at stride 2 to reach `total_stride`, and the last stage's activation
//! is the guided feature layer where anchors are defined and imitation
//! applies. Classification and regression heads are 1x1 convolutions over
//! that map.

mod assign;
mod eval;
mod inference;
mod loss;
mod model;

pub use assign::{assign_targets, decode_deltas, encode_deltas, AnchorLabel, AssignThresholds, TargetAssignment};
pub use eval::{evaluate_ap, ApReport};
pub use inference::{brute_force_nms, decode_and_nms, greedy_nms, write_detections_jsonl, Detection, InferenceConfig};
pub use loss::{detection_loss, DetectionLossResult, SamplingConfig};
pub use model::{backward, forward, DetectorGrads, DetectorParams, ForwardPass};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and training-assignment settings of one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Output channels of each backbone conv stage.
    pub backbone_widths: Vec<usize>,
    /// Downsampling factor from image to guided feature map. Power of two;
    /// the first log2(total_stride) stages run at stride 2.
    pub total_stride: usize,
    pub num_classes: usize,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    /// Anchors with IOU above this against some gt are positive.
    pub pos_iou: f64,
    /// Anchors with max IOU below this are negative.
    pub neg_iou: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            backbone_widths: vec![16, 32, 64, 64],
            total_stride: 8,
            num_classes: 3,
            anchor_scales: vec![10.0, 16.0, 24.0],
            anchor_ratios: vec![1.0],
            pos_iou: 0.7,
            neg_iou: 0.3,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backbone_widths.is_empty() || self.backbone_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArg(format!(
                "backbone widths must be nonempty and positive, got {:?}",
                self.backbone_widths
            )));
        }
        if !self.total_stride.is_power_of_two() {
            return Err(Error::InvalidArg(format!("total_stride must be a power of two, got {}", self.total_stride)));
        }
        if self.num_downsample_stages() > self.backbone_widths.len() {
            return Err(Error::InvalidArg(format!(
                "total_stride {} needs {} stride-2 stages but only {} stages exist",
                self.total_stride,
                self.num_downsample_stages(),
                self.backbone_widths.len()
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidArg("num_classes must be >= 1".into()));
        }
        if self.anchor_scales.is_empty() || self.anchor_ratios.is_empty() {
            return Err(Error::InvalidArg("anchor scales and ratios must be nonempty".into()));
        }
        if !(self.pos_iou > self.neg_iou) || !(0.0..=1.0).contains(&self.pos_iou) || !(0.0..=1.0).contains(&self.neg_iou) {
            return Err(Error::InvalidArg(format!(
                "need 0 <= neg_iou < pos_iou <= 1, got pos {} neg {}",
                self.pos_iou, self.neg_iou
            )));
        }
        Ok(())
    }

    /// Anchors per feature cell.
    pub fn k(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    /// Channels of the classification head: K * (num_classes + background).
    pub fn cls_channels(&self) -> usize {
        self.k() * (self.num_classes + 1)
    }

    pub fn reg_channels(&self) -> usize {
        self.k() * 4
    }

    fn num_downsample_stages(&self) -> usize {
        self.total_stride.trailing_zeros() as usize
    }

    /// Per-stage strides: stride-2 stages first, then stride 1.
    pub fn stage_strides(&self) -> Vec<usize> {
        let down = self.num_downsample_stages();
        (0..self.backbone_widths.len()).map(|i| if i < down { 2 } else { 1 }).collect()
    }

    pub fn anchor_grid(&self, image_w: usize, image_h: usize) -> Result<crate::geometry::AnchorGrid> {
        crate::geometry::AnchorGrid::build(
            image_w / self.total_stride,
            image_h / self.total_stride,
            self.total_stride,
            &self.anchor_scales,
            &self.anchor_ratios,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        DetectorConfig::default().validate().unwrap();
    }

    #[test]
    fn stage_strides_reach_total_stride() {
        let cfg = DetectorConfig::default();
        let strides = cfg.stage_strides();
        assert_eq!(strides, vec![2, 2, 2, 1]);
        assert_eq!(strides.iter().product::<usize>(), cfg.total_stride);
    }

    #[test]
    fn head_channel_contract() {
        let cfg = DetectorConfig::default();
        assert_eq!(cfg.k(), 3);
        assert_eq!(cfg.cls_channels(), 3 * 4);
        assert_eq!(cfg.reg_channels(), 12);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = DetectorConfig::default();
        cfg.pos_iou = 0.2; // below neg_iou
        assert!(cfg.validate().is_err());

        let mut cfg = DetectorConfig::default();
        cfg.backbone_widths = vec![16];
        assert!(cfg.validate().is_err(), "one stage cannot reach stride 8");

        let mut cfg = DetectorConfig::default();
        cfg.total_stride = 6;
        assert!(cfg.validate().is_err());
    }
}
