//! Boxes, anchor grids, and IOU maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in image pixel coordinates, corner convention
/// `x1 < x2`, `y1 < y2`. Ground-truth boxes carry a class id; anchors and
/// other geometry-only boxes leave it at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default)]
    pub class_id: usize,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<BBox> {
        BBox::with_class(x1, y1, x2, y2, 0)
    }

    pub fn with_class(x1: f64, y1: f64, x2: f64, y2: f64, class_id: usize) -> Result<BBox> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateBox(format!("non-finite coordinates ({x1}, {y1}, {x2}, {y2})")));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::DegenerateBox(format!(
                "needs x1 < x2 and y1 < y2, got ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(BBox { x1, y1, x2, y2, class_id })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn clipped(&self, w: f64, h: f64) -> Option<BBox> {
        let x1 = self.x1.max(0.0);
        let y1 = self.y1.max(0.0);
        let x2 = self.x2.min(w);
        let y2 = self.y2.min(h);
        if x1 < x2 && y1 < y2 {
            Some(BBox { x1, y1, x2, y2, class_id: self.class_id })
        } else {
            None
        }
    }
}

/// Intersection over union of two valid boxes. Symmetric, in [0, 1].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// K preset anchor boxes replicated over a W x H feature lattice.
///
/// The anchor for cell `(i, j)`, scale `s`, ratio `r` is centered at
/// `((i + 0.5) * stride, (j + 0.5) * stride)` with width `s / sqrt(r)` and
/// height `s * sqrt(r)` (area-preserving ratios). Anchors are not clipped
/// to image bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub feat_w: usize,
    pub feat_h: usize,
    pub stride: usize,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    anchors: Vec<BBox>,
}

impl AnchorGrid {
    pub fn build(feat_w: usize, feat_h: usize, stride: usize, scales: &[f64], ratios: &[f64]) -> Result<AnchorGrid> {
        if feat_w < 1 || feat_h < 1 || stride < 1 {
            return Err(Error::InvalidArg(format!(
                "anchor grid needs feat_w, feat_h, stride >= 1, got {feat_w}x{feat_h} stride {stride}"
            )));
        }
        if scales.is_empty() || ratios.is_empty() {
            return Err(Error::InvalidArg("anchor scales and ratios must be nonempty".into()));
        }
        if scales.iter().chain(ratios).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArg("anchor scales and ratios must be positive finite".into()));
        }
        let k = scales.len() * ratios.len();
        let mut anchors = Vec::with_capacity(feat_w * feat_h * k);
        for i in 0..feat_w {
            for j in 0..feat_h {
                let cx = (i as f64 + 0.5) * stride as f64;
                let cy = (j as f64 + 0.5) * stride as f64;
                for &s in scales {
                    for &r in ratios {
                        let w = s / r.sqrt();
                        let h = s * r.sqrt();
                        anchors.push(BBox {
                            x1: cx - w / 2.0,
                            y1: cy - h / 2.0,
                            x2: cx + w / 2.0,
                            y2: cy + h / 2.0,
                            class_id: 0,
                        });
                    }
                }
            }
        }
        Ok(AnchorGrid {
            feat_w,
            feat_h,
            stride,
            scales: scales.to_vec(),
            ratios: ratios.to_vec(),
            anchors,
        })
    }

    /// Anchors per cell.
    pub fn k(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.feat_h + j) * self.k() + k
    }

    #[inline]
    pub fn anchor(&self, i: usize, j: usize, k: usize) -> &BBox {
        &self.anchors[self.index(i, j, k)]
    }

    pub fn anchors(&self) -> &[BBox] {
        &self.anchors
    }
}

/// W x H x K overlap values between one ground-truth box and every anchor.
#[derive(Debug, Clone)]
pub struct IouMap {
    pub feat_w: usize,
    pub feat_h: usize,
    pub k: usize,
    pub gt_index: usize,
    values: Vec<f64>,
}

impl IouMap {
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.feat_h + j) * self.k + k]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// IOU of one ground-truth box against every anchor in the grid.
pub fn iou_map(gt: &BBox, grid: &AnchorGrid, gt_index: usize) -> IouMap {
    let values = grid.anchors().iter().map(|a| iou(gt, a)).collect();
    IouMap {
        feat_w: grid.feat_w,
        feat_h: grid.feat_h,
        k: grid.k(),
        gt_index,
        values,
    }
}
