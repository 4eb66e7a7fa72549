//! Near-object imitation region estimation.
//!
//! For each ground-truth box the IOU map against all anchors is thresholded
//! at `F = psi * M` where `M` is the box's largest anchor overlap; locations
//! where any of the K per-cell values strictly exceeds `F` are kept and
//! OR-combined over anchors and over boxes into a W x H binary mask.
//!
//! The comparison is strict so that `psi = 1` keeps nothing; `psi = 0` is
//! special-cased to the all-ones mask (full-feature imitation) rather than
//! thresholding at zero, which would drop cells with exactly zero overlap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_map, AnchorGrid, BBox};
use crate::numerics::Tensor;

/// W x H binary mask of near-object feature locations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImitationMask {
    pub w: usize,
    pub h: usize,
    values: Vec<bool>,
    n_positive: usize,
}

impl ImitationMask {
    pub fn from_values(w: usize, h: usize, values: Vec<bool>) -> Result<ImitationMask> {
        if values.len() != w * h {
            return Err(Error::shape(
                "ImitationMask",
                format!("{} cells for {w}x{h}", w * h),
                format!("{}", values.len()),
            ));
        }
        let n_positive = values.iter().filter(|&&v| v).count();
        Ok(ImitationMask { w, h, values, n_positive })
    }

    pub fn zeros(w: usize, h: usize) -> ImitationMask {
        ImitationMask {
            w,
            h,
            values: vec![false; w * h],
            n_positive: 0,
        }
    }

    pub fn ones(w: usize, h: usize) -> ImitationMask {
        ImitationMask {
            w,
            h,
            values: vec![true; w * h],
            n_positive: w * h,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.values[i * self.h + j]
    }

    /// Number of positive cells (N_p).
    pub fn n_positive(&self) -> usize {
        self.n_positive
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    /// Cellwise OR with another mask of the same dims.
    pub fn union(&self, other: &ImitationMask) -> Result<ImitationMask> {
        if (self.w, self.h) != (other.w, other.h) {
            return Err(Error::shape(
                "ImitationMask::union",
                format!("{}x{}", self.w, self.h),
                format!("{}x{}", other.w, other.h),
            ));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a | b).collect();
        ImitationMask::from_values(self.w, self.h, values)
    }

    /// True if every set cell of `other` is also set here.
    pub fn contains(&self, other: &ImitationMask) -> bool {
        self.w == other.w
            && self.h == other.h
            && self.values.iter().zip(&other.values).all(|(a, b)| *a || !*b)
    }
}

/// Thresholding factor for adaptive mask estimation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaskConfig {
    pub psi: f64,
}

impl MaskConfig {
    pub fn new(psi: f64) -> Result<MaskConfig> {
        if !(0.0..=1.0).contains(&psi) {
            return Err(Error::InvalidArg(format!("psi must be in [0, 1], got {psi}")));
        }
        Ok(MaskConfig { psi })
    }
}

/// Per-ground-truth record of how the mask was formed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtMaskTrace {
    pub gt_index: usize,
    /// Largest IOU value M = max(m).
    pub max_iou: f64,
    /// Filter threshold F = psi * M.
    pub threshold: f64,
    /// Cells this ground truth contributed before OR-combination.
    pub kept_count: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MaskTrace {
    pub per_gt: Vec<GtMaskTrace>,
    /// Ground truths whose max anchor IOU was zero; they contribute no cells
    /// for psi > 0 and are worth surfacing when tuning anchors.
    pub warnings: Vec<String>,
}

/// Adaptive near-object mask (the fine-grained imitation region).
pub fn estimate_mask(gts: &[BBox], grid: &AnchorGrid, cfg: &MaskConfig) -> (ImitationMask, MaskTrace) {
    let (w, h, k) = (grid.feat_w, grid.feat_h, grid.k());
    let mut trace = MaskTrace::default();

    if cfg.psi == 0.0 {
        // Degenerate full-feature case: every location is kept.
        for (gi, gt) in gts.iter().enumerate() {
            let m = iou_map(gt, grid, gi);
            trace.per_gt.push(GtMaskTrace {
                gt_index: gi,
                max_iou: m.max(),
                threshold: 0.0,
                kept_count: w * h,
            });
        }
        return (ImitationMask::ones(w, h), trace);
    }

    let mut values = vec![false; w * h];
    for (gi, gt) in gts.iter().enumerate() {
        let m = iou_map(gt, grid, gi);
        let max_iou = m.max();
        let threshold = cfg.psi * max_iou;
        if max_iou == 0.0 {
            trace.warnings.push(format!("gt {gi} has zero IOU with every anchor; skipped"));
            trace.per_gt.push(GtMaskTrace {
                gt_index: gi,
                max_iou,
                threshold,
                kept_count: 0,
            });
            continue;
        }
        let mut kept = 0usize;
        for i in 0..w {
            for j in 0..h {
                if (0..k).any(|kk| m.get(i, j, kk) > threshold) {
                    values[i * h + j] = true;
                    kept += 1;
                }
            }
        }
        trace.per_gt.push(GtMaskTrace {
            gt_index: gi,
            max_iou,
            threshold,
            kept_count: kept,
        });
    }
    let mask = ImitationMask::from_values(w, h, values).expect("dims are consistent by construction");
    (mask, trace)
}

/// Constant-threshold mask: keep locations where any anchor IOU strictly
/// exceeds `f_const`, OR over ground truths.
pub fn estimate_mask_hard(gts: &[BBox], grid: &AnchorGrid, f_const: f64) -> Result<ImitationMask> {
    if !(0.0..=1.0).contains(&f_const) {
        return Err(Error::InvalidArg(format!("hard threshold must be in [0, 1], got {f_const}")));
    }
    let (w, h, k) = (grid.feat_w, grid.feat_h, grid.k());
    let mut values = vec![false; w * h];
    for (gi, gt) in gts.iter().enumerate() {
        let m = iou_map(gt, grid, gi);
        for i in 0..w {
            for j in 0..h {
                if (0..k).any(|kk| m.get(i, j, kk) > f_const) {
                    values[i * h + j] = true;
                }
            }
        }
    }
    ImitationMask::from_values(w, h, values)
}

/// Ground-truth projection mask: set every feature cell whose image-space
/// rectangle overlaps a ground-truth box with positive area.
pub fn gt_projection_mask(gts: &[BBox], stride: usize, feat_w: usize, feat_h: usize) -> Result<ImitationMask> {
    if stride < 1 {
        return Err(Error::InvalidArg(format!("stride must be >= 1, got {stride}")));
    }
    let s = stride as f64;
    let mut values = vec![false; feat_w * feat_h];
    for gt in gts {
        for i in 0..feat_w {
            for j in 0..feat_h {
                let cx1 = i as f64 * s;
                let cy1 = j as f64 * s;
                let overlap_w = (cx1 + s).min(gt.x2) - cx1.max(gt.x1);
                let overlap_h = (cy1 + s).min(gt.y2) - cy1.max(gt.y1);
                if overlap_w > 0.0 && overlap_h > 0.0 {
                    values[i * feat_h + j] = true;
                }
            }
        }
    }
    ImitationMask::from_values(feat_w, feat_h, values)
}

/// Image-space rectangle of one mask cell, for overlay figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayRect {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Scale set cells back to image space: cell `(i, j)` becomes
/// `(i*stride, j*stride, (i+1)*stride, (j+1)*stride)` clipped to the image.
pub fn mask_to_overlay(mask: &ImitationMask, stride: usize, image_w: usize, image_h: usize) -> Vec<OverlayRect> {
    let s = stride as f64;
    let mut rects = Vec::with_capacity(mask.n_positive());
    for i in 0..mask.w {
        for j in 0..mask.h {
            if mask.get(i, j) {
                let x1 = i as f64 * s;
                let y1 = j as f64 * s;
                let x2 = ((i + 1) as f64 * s).min(image_w as f64);
                let y2 = ((j + 1) as f64 * s).min(image_h as f64);
                if x1 < x2 && y1 < y2 {
                    rects.push(OverlayRect { x1, y1, x2, y2 });
                }
            }
        }
    }
    rects
}

/// Rasterize an overlay onto a grayscale `[W, H, 1]` image as an RGB image
/// with alpha-blended highlight cells.
pub fn render_overlay(image: &Tensor, rects: &[OverlayRect], alpha: f64) -> Result<image::RgbImage> {
    if image.dims().len() != 3 || image.dims()[2] != 1 {
        return Err(Error::shape("render_overlay", "[W, H, 1] image", format!("{:?}", image.dims())));
    }
    let (w, h) = (image.dims()[0], image.dims()[1]);
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for x in 0..w {
        for y in 0..h {
            let g = (image.get3(x, y, 0).clamp(0.0, 1.0) * 255.0).round() as u8;
            out.put_pixel(x as u32, y as u32, image::Rgb([g, g, g]));
        }
    }
    let highlight = [255.0, 64.0, 32.0];
    for r in rects {
        let x_lo = r.x1.max(0.0) as u32;
        let y_lo = r.y1.max(0.0) as u32;
        let x_hi = (r.x2.min(w as f64) as u32).min(w as u32);
        let y_hi = (r.y2.min(h as f64) as u32).min(h as u32);
        for x in x_lo..x_hi {
            for y in y_lo..y_hi {
                let px = out.get_pixel_mut(x, y);
                for c in 0..3 {
                    let blended = (1.0 - alpha) * px.0[c] as f64 + alpha * highlight[c];
                    px.0[c] = blended.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Ok(out)
}

/// Brute-force reference: explicit triple loop over gts x cells x K with the
/// same threshold rule. Kept public for the acceptance suite; it must stay
/// independent of [`estimate_mask`]'s looping structure.
pub fn brute_force_mask(gts: &[BBox], grid: &AnchorGrid, psi: f64) -> ImitationMask {
    let (w, h) = (grid.feat_w, grid.feat_h);
    if psi == 0.0 {
        return ImitationMask::ones(w, h);
    }
    let mut values = vec![false; w * h];
    for gt in gts {
        let mut max_iou = 0.0f64;
        for i in 0..w {
            for j in 0..h {
                for k in 0..grid.k() {
                    max_iou = max_iou.max(crate::geometry::iou(gt, grid.anchor(i, j, k)));
                }
            }
        }
        if max_iou == 0.0 {
            continue;
        }
        let f = psi * max_iou;
        for i in 0..w {
            for j in 0..h {
                for k in 0..grid.k() {
                    if crate::geometry::iou(gt, grid.anchor(i, j, k)) > f {
                        values[i * h + j] = true;
                    }
                }
            }
        }
    }
    ImitationMask::from_values(w, h, values).expect("consistent dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn grid_2x2() -> AnchorGrid {
        AnchorGrid::build(2, 2, 16, &[16.0], &[1.0]).unwrap()
    }

    fn random_scene(rng: &mut Rng, extent: f64, n: usize) -> Vec<BBox> {
        (0..n)
            .map(|_| {
                let x1 = rng.uniform(0.0, extent * 0.8);
                let y1 = rng.uniform(0.0, extent * 0.8);
                BBox::new(x1, y1, x1 + rng.uniform(2.0, extent * 0.4), y1 + rng.uniform(2.0, extent * 0.4)).unwrap()
            })
            .collect()
    }

    #[test]
    fn psi_zero_keeps_all_locations() {
        let grid = grid_2x2();
        let gts = vec![BBox::new(0.0, 0.0, 16.0, 16.0).unwrap()];
        let (mask, _) = estimate_mask(&gts, &grid, &MaskConfig::new(0.0).unwrap());
        assert_eq!(mask.n_positive(), 4);
    }

    #[test]
    fn psi_one_keeps_nothing() {
        let grid = grid_2x2();
        let gts = vec![BBox::new(0.0, 0.0, 16.0, 16.0).unwrap()];
        let (mask, trace) = estimate_mask(&gts, &grid, &MaskConfig::new(1.0).unwrap());
        assert_eq!(mask.n_positive(), 0);
        assert_eq!(trace.per_gt[0].max_iou, 1.0);
        assert_eq!(trace.per_gt[0].threshold, 1.0);
    }

    #[test]
    fn exact_anchor_match_keeps_only_that_cell() {
        let grid = grid_2x2();
        // gt equals the anchor at cell (0, 0); neighbors have IOU well below
        // F = 0.5 * 1.0.
        let gts = vec![*grid.anchor(0, 0, 0)];
        let (mask, trace) = estimate_mask(&gts, &grid, &MaskConfig::new(0.5).unwrap());
        assert!(mask.get(0, 0));
        assert_eq!(mask.n_positive(), 1);
        assert_eq!(trace.per_gt[0].kept_count, 1);
    }

    #[test]
    fn empty_gts_gives_empty_mask_for_positive_psi() {
        let grid = grid_2x2();
        let (mask, trace) = estimate_mask(&[], &grid, &MaskConfig::new(0.5).unwrap());
        assert_eq!(mask.n_positive(), 0);
        assert!(trace.per_gt.is_empty());
    }

    #[test]
    fn zero_overlap_gt_warns_and_contributes_nothing() {
        let grid = grid_2x2();
        let gts = vec![BBox::new(900.0, 900.0, 950.0, 950.0).unwrap()];
        let (mask, trace) = estimate_mask(&gts, &grid, &MaskConfig::new(0.5).unwrap());
        assert_eq!(mask.n_positive(), 0);
        assert_eq!(trace.warnings.len(), 1);
    }

    #[test]
    fn hard_mask_above_every_iou_is_empty() {
        let grid = grid_2x2();
        let gts = vec![BBox::new(2.0, 2.0, 10.0, 10.0).unwrap()];
        let mask = estimate_mask_hard(&gts, &grid, 0.999).unwrap();
        assert_eq!(mask.n_positive(), 0);
    }

    #[test]
    fn hard_mask_at_psi_times_max_equals_adaptive_for_single_gt() {
        let grid = AnchorGrid::build(4, 4, 16, &[16.0, 24.0], &[1.0]).unwrap();
        let mut rng = Rng::new(21);
        for _ in 0..20 {
            let gts = random_scene(&mut rng, 64.0, 1);
            let m = iou_map(&gts[0], &grid, 0);
            let psi = 0.5;
            let f = psi * m.max();
            if f > 1.0 || m.max() == 0.0 {
                continue;
            }
            let adaptive = estimate_mask(&gts, &grid, &MaskConfig::new(psi).unwrap()).0;
            let hard = estimate_mask_hard(&gts, &grid, f).unwrap();
            assert_eq!(adaptive, hard);
        }
    }

    #[test]
    fn hard_mask_matches_brute_force_loop() {
        let mut rng = Rng::new(33);
        let grid = AnchorGrid::build(5, 5, 8, &[8.0, 16.0], &[0.5, 1.0]).unwrap();
        for _ in 0..30 {
            let gts = random_scene(&mut rng, 40.0, 3);
            let fast = estimate_mask_hard(&gts, &grid, 0.5).unwrap();
            // Direct loop with the same rule.
            let mut expect = vec![false; 25];
            for gt in &gts {
                for i in 0..5 {
                    for j in 0..5 {
                        for k in 0..grid.k() {
                            if crate::geometry::iou(gt, grid.anchor(i, j, k)) > 0.5 {
                                expect[i * 5 + j] = true;
                            }
                        }
                    }
                }
            }
            assert_eq!(fast.values(), &expect[..]);
        }
    }

    #[test]
    fn adaptive_mask_matches_brute_force_reference() {
        let mut rng = Rng::new(55);
        for trial in 0..100 {
            let w = 1 + rng.range(8);
            let h = 1 + rng.range(8);
            let scales: Vec<f64> = (0..1 + rng.range(3)).map(|_| rng.uniform(4.0, 40.0)).collect();
            let ratios: Vec<f64> = (0..1 + rng.range(3)).map(|_| rng.uniform(0.4, 2.5)).collect();
            let grid = AnchorGrid::build(w, h, 8, &scales, &ratios).unwrap();
            let n_gts = rng.range(5) + 1;
            let gts = random_scene(&mut rng, (w * 8) as f64, n_gts);
            let psi = rng.uniform(0.0, 1.0);
            let (mask, _) = estimate_mask(&gts, &grid, &MaskConfig::new(psi).unwrap());
            let oracle = brute_force_mask(&gts, &grid, psi);
            assert_eq!(mask, oracle, "trial {trial} psi {psi}");
        }
    }

    #[test]
    fn gt_projection_full_image_box_sets_all_cells() {
        let mask = gt_projection_mask(&[BBox::new(0.0, 0.0, 32.0, 32.0).unwrap()], 16, 2, 2).unwrap();
        assert_eq!(mask.n_positive(), 4);
    }

    #[test]
    fn gt_projection_empty_gts_is_empty() {
        let mask = gt_projection_mask(&[], 16, 2, 2).unwrap();
        assert_eq!(mask.n_positive(), 0);
    }

    #[test]
    fn gt_projection_respects_cell_boundaries() {
        // Box exactly covering cell (0, 0): touching the boundary of cell
        // (1, 0) with zero area must not set it.
        let mask = gt_projection_mask(&[BBox::new(0.0, 0.0, 16.0, 16.0).unwrap()], 16, 2, 2).unwrap();
        assert!(mask.get(0, 0));
        assert_eq!(mask.n_positive(), 1);
    }

    #[test]
    fn overlay_of_empty_mask_is_empty() {
        let mask = ImitationMask::zeros(4, 4);
        assert!(mask_to_overlay(&mask, 16, 64, 64).is_empty());
    }

    #[test]
    fn overlay_scales_single_cell() {
        let mut values = vec![false; 16];
        values[2 * 4 + 1] = true; // cell (2, 1)
        let mask = ImitationMask::from_values(4, 4, values).unwrap();
        let rects = mask_to_overlay(&mask, 16, 64, 64);
        assert_eq!(rects, vec![OverlayRect { x1: 32.0, y1: 16.0, x2: 48.0, y2: 32.0 }]);
    }

    #[test]
    fn overlay_of_full_mask_tiles_the_image() {
        let mask = ImitationMask::ones(4, 4);
        let rects = mask_to_overlay(&mask, 16, 64, 64);
        assert_eq!(rects.len(), 16);
        let area: f64 = rects.iter().map(|r| (r.x2 - r.x1) * (r.y2 - r.y1)).sum();
        assert_eq!(area, 64.0 * 64.0);
        // No two rectangles overlap.
        for (a, r1) in rects.iter().enumerate() {
            for r2 in rects.iter().skip(a + 1) {
                let ow = (r1.x2.min(r2.x2) - r1.x1.max(r2.x1)).max(0.0);
                let oh = (r1.y2.min(r2.y2) - r1.y1.max(r2.y1)).max(0.0);
                assert_eq!(ow * oh, 0.0);
            }
        }
    }

    #[test]
    fn union_property_mask_of_ab_is_or_of_masks() {
        let mut rng = Rng::new(77);
        let grid = AnchorGrid::build(6, 6, 8, &[8.0, 16.0], &[1.0]).unwrap();
        for _ in 0..30 {
            let a = random_scene(&mut rng, 48.0, 2);
            let b = random_scene(&mut rng, 48.0, 2);
            let mut both = a.clone();
            both.extend_from_slice(&b);
            let cfg = MaskConfig::new(0.5).unwrap();
            let mask_both = estimate_mask(&both, &grid, &cfg).0;
            let or = estimate_mask(&a, &grid, &cfg)
                .0
                .union(&estimate_mask(&b, &grid, &cfg).0)
                .unwrap();
            assert_eq!(mask_both, or);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mask_is_monotone_in_psi(seed in 0u64..1000, psi1 in 0.01f64..1.0, psi2 in 0.01f64..1.0) {
            let (lo, hi) = if psi1 <= psi2 { (psi1, psi2) } else { (psi2, psi1) };
            let mut rng = Rng::new(seed);
            let grid = AnchorGrid::build(6, 6, 8, &[8.0, 16.0], &[1.0]).unwrap();
            let n_gts = 1 + rng.range(4);
            let gts = random_scene(&mut rng, 48.0, n_gts);
            let m_lo = estimate_mask(&gts, &grid, &MaskConfig::new(lo).unwrap()).0;
            let m_hi = estimate_mask(&gts, &grid, &MaskConfig::new(hi).unwrap()).0;
            prop_assert!(m_lo.contains(&m_hi));
            prop_assert!(m_lo.n_positive() >= m_hi.n_positive());
        }
    }
}
