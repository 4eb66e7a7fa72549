use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};

use super::inference::Detection;

/// Per-class average precision and the mean over classes that have ground
/// truth. Classes without any ground truth are excluded (`None`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApReport {
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

/// All-points interpolated average precision at a fixed IOU threshold.
///
/// Detections are matched greedily in descending score order to the
/// highest-IOU unmatched ground truth of the same class in the same image;
/// a match requires IOU >= `iou_thresh` and each ground truth matches at
/// most once.
pub fn evaluate_ap(
    detections_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<BBox>],
    iou_thresh: f64,
    num_classes: usize,
) -> ApReport {
    assert_eq!(
        detections_per_image.len(),
        gts_per_image.len(),
        "detection and ground-truth image counts differ"
    );
    let mut per_class = Vec::with_capacity(num_classes);
    for class_id in 0..num_classes {
        let n_gt: usize = gts_per_image
            .iter()
            .map(|gts| gts.iter().filter(|g| g.class_id == class_id).count())
            .sum();
        if n_gt == 0 {
            per_class.push(None);
            continue;
        }

        // All detections of this class, globally sorted by score descending.
        // Ties break by image then insertion order so evaluation is
        // deterministic.
        let mut dets: Vec<(usize, usize, f64)> = Vec::new(); // (image, det idx, score)
        for (img, image_dets) in detections_per_image.iter().enumerate() {
            for (di, d) in image_dets.iter().enumerate() {
                if d.class_id == class_id {
                    dets.push((img, di, d.score));
                }
            }
        }
        dets.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

        let mut matched: Vec<Vec<bool>> = gts_per_image
            .iter()
            .map(|gts| vec![false; gts.len()])
            .collect();
        let mut tp = Vec::with_capacity(dets.len());
        for &(img, di, _) in &dets {
            let det = &detections_per_image[img][di];
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts_per_image[img].iter().enumerate() {
                if gt.class_id != class_id || matched[img][gi] {
                    continue;
                }
                let v = iou(&det.bbox, gt);
                if v >= iou_thresh && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            if let Some((gi, _)) = best {
                matched[img][gi] = true;
                tp.push(true);
            } else {
                tp.push(false);
            }
        }

        per_class.push(Some(all_points_ap(&tp, n_gt)));
    }

    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    ApReport { per_class, map }
}

/// Area under the precision envelope over recall, from a score-ordered
/// true/false-positive sequence.
fn all_points_ap(tp: &[bool], n_gt: usize) -> f64 {
    if tp.is_empty() {
        return 0.0;
    }
    let mut precisions = Vec::with_capacity(tp.len());
    let mut recalls = Vec::with_capacity(tp.len());
    let mut tp_cum = 0usize;
    for (i, &is_tp) in tp.iter().enumerate() {
        if is_tp {
            tp_cum += 1;
        }
        precisions.push(tp_cum as f64 / (i + 1) as f64);
        recalls.push(tp_cum as f64 / n_gt as f64);
    }
    // Precision envelope: max precision at any recall >= r.
    for i in (0..precisions.len() - 1).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..recalls.len() {
        if recalls[i] > prev_recall {
            ap += (recalls[i] - prev_recall) * precisions[i];
            prev_recall = recalls[i];
        }
    }
    ap
}
