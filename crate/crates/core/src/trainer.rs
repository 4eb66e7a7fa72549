//! Teacher training, width-multiplied students, and the distillation loop.
//!
//! One engine drives both plain and distilled training so that a distilled
//! run with `lambda = 0` reproduces plain training bit-for-bit: the two
//! paths consume identical RNG streams (the adaptation layer has its own
//! derived stream) and the imitation contribution enters only as
//! `lambda * gradient`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::detector::{
    assign_targets, backward, decode_and_nms, detection_loss, evaluate_ap, forward, AssignThresholds, DetectorConfig,
    DetectorGrads, DetectorParams, InferenceConfig, SamplingConfig,
};
use crate::error::{Error, Result};
use crate::imitation::{
    adapt, adapt_backward, imitation_loss, total_loss, AdaptationLayer, DistillConfig, LossBreakdown, MaskMode,
};
use crate::mask::{estimate_mask, gt_projection_mask, MaskConfig};
use crate::numerics::{load_checkpoint, save_checkpoint, sgd_step_layer, Checkpoint, LayerGrads, Tensor};
use crate::rng::{derive_seed, derive_seed_n, Rng};

const SEED_TAG_MODEL: u64 = 1;
const SEED_TAG_ADAPT: u64 = 2;
const SEED_TAG_ORDER: u64 = 3;
const SEED_TAG_SAMPLE: u64 = 4;

/// Optimizer and loop settings for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate mAP on the test set every this many iterations (0 = final
    /// evaluation only).
    pub eval_every: usize,
    pub distill: Option<DistillConfig>,
    pub sampling: SamplingConfig,
    pub inference: InferenceConfig,
    /// IOU threshold for AP matching during evaluation.
    pub ap_iou: f64,
    /// Batch workers. 1 is the serial reference; higher values compute
    /// per-image gradients concurrently but reduce them in fixed slot
    /// order, so results match serial exactly. The `FINE_IMITATE_THREADS`
    /// environment variable caps this.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            iterations: 600,
            batch_size: 8,
            seed: 0,
            eval_every: 0,
            distill: None,
            sampling: SamplingConfig::default(),
            inference: InferenceConfig {
                score_thresh: 0.05,
                nms_iou: 0.5,
            },
            ap_iou: 0.5,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArg("iterations must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArg("batch_size must be > 0".into()));
        }
        if self.lr <= 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArg(format!(
                "need lr > 0 and momentum in [0, 1), got {} and {}",
                self.lr, self.momentum
            )));
        }
        if let Some(d) = &self.distill {
            d.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapPoint {
    pub iteration: usize,
    pub map: f64,
}

/// Everything a finished run reports. Paths are relative to the run's
/// output directory so identical runs produce identical files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub losses: Vec<LossBreakdown>,
    pub map_points: Vec<MapPoint>,
    pub final_map: f64,
    pub checkpoint: String,
    pub config: serde_json::Value,
}

/// Width-multiplied student: every backbone width becomes
/// `max(1, round(mult * w))`; heads are fixed by K and the class count.
pub fn make_student(teacher_cfg: &DetectorConfig, width_mult: f64) -> Result<DetectorConfig> {
    if !(width_mult > 0.0 && width_mult <= 1.0) {
        return Err(Error::InvalidArg(format!("width multiplier must be in (0, 1], got {width_mult}")));
    }
    let mut cfg = teacher_cfg.clone();
    cfg.backbone_widths = cfg
        .backbone_widths
        .iter()
        .map(|&w| ((width_mult * w as f64).round() as usize).max(1))
        .collect();
    Ok(cfg)
}

/// A loaded, frozen teacher.
#[derive(Debug, Clone)]
pub struct TeacherBundle {
    pub cfg: DetectorConfig,
    pub params: DetectorParams,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    detector: DetectorConfig,
    kind: String,
}

pub fn load_teacher(path: &Path) -> Result<TeacherBundle> {
    let ckpt = load_checkpoint(path)?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("checkpoint at {} has no detector config: {e}", path.display())))?;
    let params = DetectorParams::from_checkpoint(&ckpt, &meta.detector)?;
    Ok(TeacherBundle {
        cfg: meta.detector,
        params,
    })
}

/// Train a detector on ground truth only.
pub fn train_teacher(cfg: &DetectorConfig, train: &TrainConfig, data: &TrainData, out_dir: &Path) -> Result<RunRecord> {
    if train.distill.is_some() {
        return Err(Error::InvalidArg(
            "train_teacher does not distill; clear the distill config or use distill_train".into(),
        ));
    }
    run_training(cfg, train, None, data, out_dir, "teacher")
}

/// Train a student detector against ground truth plus masked feature
/// imitation of a frozen teacher.
pub fn distill_train(
    teacher: &TeacherBundle,
    student_cfg: &DetectorConfig,
    train: &TrainConfig,
    data: &TrainData,
    out_dir: &Path,
) -> Result<RunRecord> {
    if train.distill.is_none() {
        return Err(Error::InvalidArg("distill_train needs a distill config".into()));
    }
    if teacher.cfg.total_stride != student_cfg.total_stride {
        return Err(Error::shape(
            "distill_train",
            format!("teacher stride {}", teacher.cfg.total_stride),
            format!("student stride {}", student_cfg.total_stride),
        ));
    }
    run_training(student_cfg, train, Some(teacher), data, out_dir, "student")
}

/// Train/test split handed to the trainer.
pub struct TrainData<'a> {
    pub train: &'a [Sample],
    pub test: &'a [Sample],
}

/// Cap on batch workers from the `FINE_IMITATE_THREADS` environment
/// variable; unset means no cap.
pub fn thread_cap_from_env() -> usize {
    std::env::var("FINE_IMITATE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .map(|v| v.max(1))
        .unwrap_or(usize::MAX)
}

/// Per-image gradient bundle produced by one batch slot.
struct SlotResult {
    det: DetectorGrads,
    adapt: Option<LayerGrads>,
    l_gt: f64,
    l_imitation: f64,
}

struct DistillState {
    teacher_cfg: DetectorConfig,
    teacher_params: DetectorParams,
    cfg: DistillConfig,
    layer: AdaptationLayer,
    velocity: LayerGrads,
}

fn run_training(
    cfg: &DetectorConfig,
    train: &TrainConfig,
    teacher: Option<&TeacherBundle>,
    data: &TrainData,
    out_dir: &Path,
    kind: &str,
) -> Result<RunRecord> {
    cfg.validate()?;
    train.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArg("empty training set".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut params = DetectorParams::init(cfg, derive_seed(train.seed, SEED_TAG_MODEL))?;
    let mut velocity = params.zero_grads();
    let mut distill = match (teacher, &train.distill) {
        (Some(t), Some(d)) => {
            let layer = AdaptationLayer::init(
                params.guided_channels(),
                t.params.guided_channels(),
                derive_seed(train.seed, SEED_TAG_ADAPT),
            )?;
            let velocity = layer.params.zero_grads();
            Some(DistillState {
                teacher_cfg: t.cfg.clone(),
                teacher_params: t.params.clone(),
                cfg: *d,
                layer,
                velocity,
            })
        }
        _ => None,
    };

    let thresholds = AssignThresholds {
        pos_iou: cfg.pos_iou,
        neg_iou: cfg.neg_iou,
    };
    let zero_distill = DistillConfig {
        lambda: 0.0,
        ..DistillConfig::default()
    };
    let threads = train.threads.max(1).min(thread_cap_from_env());

    let mut order_rng = Rng::new(derive_seed(train.seed, SEED_TAG_ORDER));
    let mut losses: Vec<LossBreakdown> = Vec::with_capacity(train.iterations);
    let mut map_points = Vec::new();
    let ckpt_name = "checkpoint.json".to_string();
    let ckpt_path = out_dir.join(&ckpt_name);
    let mut have_checkpoint = false;

    for iter in 0..train.iterations {
        let lr = if iter >= train.iterations * 3 / 4 {
            train.lr * 0.1
        } else {
            train.lr
        };
        let batch: Vec<usize> = (0..train.batch_size).map(|_| order_rng.range(data.train.len())).collect();

        let slot_results = compute_batch(
            &batch,
            data.train,
            cfg,
            &params,
            &thresholds,
            train,
            distill.as_ref(),
            iter,
            threads,
        )?;

        // Fixed-order reduction over slots.
        let mut acc = params.zero_grads();
        let mut adapt_acc = distill.as_ref().map(|d| d.layer.params.zero_grads());
        let mut l_gt_sum = 0.0;
        let mut l_im_sum = 0.0;
        for slot in slot_results {
            acc.add_assign(&slot.det)?;
            if let (Some(acc_a), Some(g)) = (adapt_acc.as_mut(), slot.adapt.as_ref()) {
                acc_a.add_assign(g)?;
            }
            l_gt_sum += slot.l_gt;
            l_im_sum += slot.l_imitation;
        }
        let inv_b = 1.0 / train.batch_size as f64;
        acc.scale(inv_b);
        if let Some(a) = adapt_acc.as_mut() {
            a.scale(inv_b);
        }

        let breakdown = total_loss(
            l_gt_sum * inv_b,
            l_im_sum * inv_b,
            distill.as_ref().map(|d| &d.cfg).unwrap_or(&zero_distill),
        )
        .map_err(|_| Error::Diverged {
            iteration: iter,
            last_checkpoint: have_checkpoint.then(|| ckpt_path.clone()),
        })?;

        let update = (|| -> Result<()> {
            for (layer, (grads, vel)) in params
                .backbone
                .iter_mut()
                .zip(acc.backbone.iter().zip(velocity.backbone.iter_mut()))
            {
                sgd_step_layer(layer, grads, vel, lr, train.momentum)?;
            }
            sgd_step_layer(&mut params.cls_head, &acc.cls_head, &mut velocity.cls_head, lr, train.momentum)?;
            sgd_step_layer(&mut params.reg_head, &acc.reg_head, &mut velocity.reg_head, lr, train.momentum)?;
            if let (Some(d), Some(a)) = (distill.as_mut(), adapt_acc.as_ref()) {
                sgd_step_layer(&mut d.layer.params, a, &mut d.velocity, lr, train.momentum)?;
            }
            Ok(())
        })();
        if update.is_err() {
            return Err(Error::Diverged {
                iteration: iter,
                last_checkpoint: have_checkpoint.then(|| ckpt_path.clone()),
            });
        }
        losses.push(breakdown);

        let is_last = iter + 1 == train.iterations;
        if (train.eval_every > 0 && (iter + 1) % train.eval_every == 0) || is_last {
            let map = evaluate(cfg, &params, data.test, train)?;
            map_points.push(MapPoint {
                iteration: iter + 1,
                map,
            });
            write_checkpoint_file(&ckpt_path, cfg, &params, distill.as_ref(), kind)?;
            have_checkpoint = true;
        }
    }

    let final_map = map_points.last().map(|p| p.map).unwrap_or(0.0);
    let record = RunRecord {
        losses,
        map_points,
        final_map,
        checkpoint: ckpt_name,
        config: serde_json::json!({
            "detector": cfg,
            "train": train,
            "kind": kind,
        }),
    };
    std::fs::write(out_dir.join("run_record.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn compute_batch(
    batch: &[usize],
    train_set: &[Sample],
    cfg: &DetectorConfig,
    params: &DetectorParams,
    thresholds: &AssignThresholds,
    train: &TrainConfig,
    distill: Option<&DistillState>,
    iter: usize,
    threads: usize,
) -> Result<Vec<SlotResult>> {
    let slots: Vec<(usize, usize)> = batch.iter().copied().enumerate().collect();
    if threads <= 1 || batch.len() == 1 {
        return slots
            .iter()
            .map(|&(slot, img)| compute_slot(slot, &train_set[img], cfg, params, thresholds, train, distill, iter))
            .collect();
    }

    let workers = threads.min(batch.len());
    let chunk = batch.len().div_ceil(workers);
    let mut results: Vec<Option<Result<SlotResult>>> = (0..batch.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_idx, out_chunk) in results.chunks_mut(chunk).enumerate() {
            let slots = &slots;
            scope.spawn(move || {
                for (offset, out) in out_chunk.iter_mut().enumerate() {
                    let (slot, img) = slots[chunk_idx * chunk + offset];
                    *out = Some(compute_slot(
                        slot,
                        &train_set[img],
                        cfg,
                        params,
                        thresholds,
                        train,
                        distill,
                        iter,
                    ));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every slot filled by a worker"))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn compute_slot(
    slot: usize,
    sample: &Sample,
    cfg: &DetectorConfig,
    params: &DetectorParams,
    thresholds: &AssignThresholds,
    train: &TrainConfig,
    distill: Option<&DistillState>,
    iter: usize,
) -> Result<SlotResult> {
    let (img_w, img_h) = (sample.image.dims()[0], sample.image.dims()[1]);
    let grid = cfg.anchor_grid(img_w, img_h)?;
    let pass = forward(&sample.image, cfg, params)?;
    let assignment = assign_targets(&grid, &sample.gts, thresholds);
    let mut sampler = Rng::new(derive_seed_n(train.seed, &[SEED_TAG_SAMPLE, iter as u64, slot as u64]));
    let det = detection_loss(
        &pass.cls_logits,
        &pass.reg_preds,
        &assignment,
        &grid,
        cfg.num_classes,
        &train.sampling,
        &mut sampler,
    )?;

    if let Some(d) = distill {
        let teacher_pass = forward(&sample.image, &d.teacher_cfg, &d.teacher_params)?;
        let mask = match d.cfg.mask_mode {
            MaskMode::Adaptive => estimate_mask(&sample.gts, &grid, &MaskConfig::new(d.cfg.psi)?).0,
            MaskMode::GtProjection => gt_projection_mask(&sample.gts, cfg.total_stride, grid.feat_w, grid.feat_h)?,
        };
        let adapted = adapt(&pass.guided, &d.layer)?;
        let (l_im, grad_adapted) = imitation_loss(&adapted, &teacher_pass.guided, &mask)?;
        let mut scaled = grad_adapted;
        scaled.scale(d.cfg.lambda);
        let (grad_guided_extra, adapt_grads) = adapt_backward(&pass.guided, &d.layer, &scaled)?;
        let grads = backward(&pass, cfg, params, &det.grad_cls, &det.grad_reg, Some(&grad_guided_extra))?;
        Ok(SlotResult {
            det: grads,
            adapt: Some(adapt_grads),
            l_gt: det.loss,
            l_imitation: l_im,
        })
    } else {
        let grads = backward(&pass, cfg, params, &det.grad_cls, &det.grad_reg, None)?;
        Ok(SlotResult {
            det: grads,
            adapt: None,
            l_gt: det.loss,
            l_imitation: 0.0,
        })
    }
}

/// mAP of the current parameters over a sample set.
pub fn evaluate(cfg: &DetectorConfig, params: &DetectorParams, samples: &[Sample], train: &TrainConfig) -> Result<f64> {
    let mut dets_per_image = Vec::with_capacity(samples.len());
    let mut gts_per_image = Vec::with_capacity(samples.len());
    for sample in samples {
        let (img_w, img_h) = (sample.image.dims()[0], sample.image.dims()[1]);
        let grid = cfg.anchor_grid(img_w, img_h)?;
        let pass = forward(&sample.image, cfg, params)?;
        let dets = decode_and_nms(
            &pass.cls_logits,
            &pass.reg_preds,
            &grid,
            cfg.num_classes,
            &train.inference,
            img_w,
            img_h,
        )?;
        dets_per_image.push(dets);
        gts_per_image.push(sample.gts.clone());
    }
    Ok(evaluate_ap(&dets_per_image, &gts_per_image, train.ap_iou, cfg.num_classes).map)
}

/// Teacher forward features on one image (used by the variance analysis).
pub fn guided_feature(cfg: &DetectorConfig, params: &DetectorParams, image: &Tensor) -> Result<Tensor> {
    Ok(forward(image, cfg, params)?.guided)
}

fn write_checkpoint_file(
    path: &Path,
    cfg: &DetectorConfig,
    params: &DetectorParams,
    distill: Option<&DistillState>,
    kind: &str,
) -> Result<()> {
    let meta = CheckpointMeta {
        detector: cfg.clone(),
        kind: kind.to_string(),
    };
    let mut ckpt: Checkpoint = params.to_checkpoint(&meta)?;
    if let Some(d) = distill {
        // Adaptation parameters live in their own namespace so inference
        // export can drop them.
        ckpt.insert("adapt.kernels", &d.layer.params.kernels);
        ckpt.insert("adapt.biases", &d.layer.params.biases);
    }
    save_checkpoint(path, &ckpt)
}

/// Load any checkpoint written by the trainer (teacher or student),
/// ignoring the adaptation namespace.
pub fn load_detector_checkpoint(path: &Path) -> Result<(DetectorConfig, DetectorParams)> {
    let bundle = load_teacher(path)?;
    Ok((bundle.cfg, bundle.params))
}

pub fn checkpoint_path(out_dir: &Path, record: &RunRecord) -> PathBuf {
    out_dir.join(&record.checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec};

    fn tiny_dataset(seed: u64, n: usize) -> Vec<Sample> {
        generate(&DatasetSpec {
            seed,
            num_images: n,
            image_size: 32,
            min_objects: 1,
            max_objects: 2,
            min_size: 8.0,
            max_size: 14.0,
            ..Default::default()
        })
        .unwrap()
    }

    fn tiny_detector() -> DetectorConfig {
        DetectorConfig {
            backbone_widths: vec![8, 12, 16],
            total_stride: 8,
            num_classes: 3,
            anchor_scales: vec![8.0, 12.0],
            anchor_ratios: vec![1.0],
            ..Default::default()
        }
    }

    fn tiny_train(iterations: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: 0.02,
            iterations,
            batch_size: 4,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn make_student_halves_widths() {
        let cfg = DetectorConfig {
            backbone_widths: vec![16, 32, 64],
            ..Default::default()
        };
        assert_eq!(make_student(&cfg, 0.5).unwrap().backbone_widths, vec![8, 16, 32]);
        assert_eq!(make_student(&cfg, 0.25).unwrap().backbone_widths, vec![4, 8, 16]);
        assert_eq!(make_student(&cfg, 1.0).unwrap(), cfg);
        assert!(make_student(&cfg, 0.0).is_err());
    }

    #[test]
    fn training_is_deterministic_for_equal_seeds() {
        let train_set = tiny_dataset(1, 12);
        let test_set = tiny_dataset(2, 4);
        let data = TrainData {
            train: &train_set,
            test: &test_set,
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg = tiny_detector();
        let tc = tiny_train(6, 9);
        let a = train_teacher(&cfg, &tc, &data, dir_a.path()).unwrap();
        let b = train_teacher(&cfg, &tc, &data, dir_b.path()).unwrap();
        assert_eq!(serde_json::to_string(&a.losses).unwrap(), serde_json::to_string(&b.losses).unwrap());
        assert_eq!(a.final_map, b.final_map);
        // Checkpoints byte-identical.
        let ca = std::fs::read(dir_a.path().join(&a.checkpoint)).unwrap();
        let cb = std::fs::read(dir_b.path().join(&b.checkpoint)).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn loss_decreases_over_short_run() {
        let train_set = tiny_dataset(3, 16);
        let test_set = tiny_dataset(4, 4);
        let data = TrainData {
            train: &train_set,
            test: &test_set,
        };
        let dir = tempfile::tempdir().unwrap();
        let record = train_teacher(&tiny_detector(), &tiny_train(60, 5), &data, dir.path()).unwrap();
        let head: f64 = record.losses[..10].iter().map(|l| l.l_total).sum::<f64>() / 10.0;
        let tail: f64 = record.losses[record.losses.len() - 10..].iter().map(|l| l.l_total).sum::<f64>() / 10.0;
        assert!(tail < head, "loss did not decrease: head {head}, tail {tail}");
    }

    #[test]
    fn lambda_zero_distill_reproduces_plain_training_bitwise() {
        let train_set = tiny_dataset(5, 10);
        let test_set = tiny_dataset(6, 3);
        let data = TrainData {
            train: &train_set,
            test: &test_set,
        };

        // A teacher (briefly trained) to distill from.
        let teacher_dir = tempfile::tempdir().unwrap();
        let teacher_cfg = tiny_detector();
        train_teacher(&teacher_cfg, &tiny_train(4, 1), &data, teacher_dir.path()).unwrap();
        let teacher = load_teacher(&teacher_dir.path().join("checkpoint.json")).unwrap();

        let student_cfg = make_student(&teacher_cfg, 0.5).unwrap();
        let plain_dir = tempfile::tempdir().unwrap();
        let distill_dir = tempfile::tempdir().unwrap();

        let tc_plain = tiny_train(8, 77);
        let mut tc_distill = tc_plain.clone();
        tc_distill.distill = Some(DistillConfig {
            lambda: 0.0,
            ..Default::default()
        });

        let plain = train_teacher(&student_cfg, &tc_plain, &data, plain_dir.path()).unwrap();
        let distilled = distill_train(&teacher, &student_cfg, &tc_distill, &data, distill_dir.path()).unwrap();

        // Same ground-truth loss trajectory and identical student params.
        for (a, b) in plain.losses.iter().zip(&distilled.losses) {
            assert_eq!(a.l_gt.to_bits(), b.l_gt.to_bits());
            assert_eq!(a.l_total.to_bits(), b.l_total.to_bits());
        }
        assert_eq!(plain.final_map, distilled.final_map);
        let pc = load_detector_checkpoint(&plain_dir.path().join(&plain.checkpoint)).unwrap().1;
        let dc = load_detector_checkpoint(&distill_dir.path().join(&distilled.checkpoint)).unwrap().1;
        assert_eq!(pc, dc);
    }

    #[test]
    fn distill_leaves_teacher_checkpoint_untouched() {
        let train_set = tiny_dataset(7, 8);
        let test_set = tiny_dataset(8, 3);
        let data = TrainData {
            train: &train_set,
            test: &test_set,
        };
        let teacher_dir = tempfile::tempdir().unwrap();
        let teacher_cfg = tiny_detector();
        train_teacher(&teacher_cfg, &tiny_train(4, 1), &data, teacher_dir.path()).unwrap();
        let ckpt_path = teacher_dir.path().join("checkpoint.json");
        let before = std::fs::read(&ckpt_path).unwrap();

        let teacher = load_teacher(&ckpt_path).unwrap();
        let student_cfg = make_student(&teacher_cfg, 0.5).unwrap();
        let mut tc = tiny_train(5, 2);
        tc.distill = Some(DistillConfig::default());
        let dir = tempfile::tempdir().unwrap();
        distill_train(&teacher, &student_cfg, &tc, &data, dir.path()).unwrap();

        assert_eq!(before, std::fs::read(&ckpt_path).unwrap());
    }

    #[test]
    fn distill_writes_adaptation_namespace_into_student_checkpoint() {
        let train_set = tiny_dataset(9, 8);
        let test_set = tiny_dataset(10, 3);
        let data = TrainData {
            train: &train_set,
            test: &test_set,
        };
        let teacher_dir = tempfile::tempdir().unwrap();
        let teacher_cfg = tiny_detector();
        train_teacher(&teacher_cfg, &tiny_train(3, 1), &data, teacher_dir.path()).unwrap();
        let teacher = load_teacher(&teacher_dir.path().join("checkpoint.json")).unwrap();

        let student_cfg = make_student(&teacher_cfg, 0.5).unwrap();
        let mut tc = tiny_train(3, 2);
        tc.distill = Some(DistillConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let record = distill_train(&teacher, &student_cfg, &tc, &data, dir.path()).unwrap();

        let ckpt = load_checkpoint(&dir.path().join(&record.checkpoint)).unwrap();
        assert!(ckpt.tensor("adapt.kernels").is_ok());
        // Inference export drops the namespace but keeps the detector.
        let mut stripped = ckpt.clone();
        stripped.strip_namespace("adapt.");
        assert!(stripped.tensor("adapt.kernels").is_err());
        assert!(stripped.tensor("backbone.0.kernels").is_ok());
        // The stripped checkpoint still loads as a detector.
        let (cfg2, _) = {
            let dir2 = tempfile::tempdir().unwrap();
            let p = dir2.path().join("stripped.json");
            save_checkpoint(&p, &stripped).unwrap();
            load_detector_checkpoint(&p).unwrap()
        };
        assert_eq!(cfg2, student_cfg);
    }

    #[test]
    fn parallel_batch_matches_serial_exactly() {
        let train_set = tiny_dataset(11, 10);
        let test_set = tiny_dataset(12, 3);
        let data = TrainData {
            train: &train_set,
            test: &test_set,
        };
        let cfg = tiny_detector();
        let tc = tiny_train(5, 3);

        let dir_serial = tempfile::tempdir().unwrap();
        let serial = train_teacher(&cfg, &tc, &data, dir_serial.path()).unwrap();

        let mut tc_par = tc.clone();
        tc_par.threads = 3;
        let dir_par = tempfile::tempdir().unwrap();
        let parallel = train_teacher(&cfg, &tc_par, &data, dir_par.path()).unwrap();

        for (a, b) in serial.losses.iter().zip(&parallel.losses) {
            assert_eq!(a.l_total.to_bits(), b.l_total.to_bits());
        }
        // Checkpoint parameter values identical (the config snapshots in the
        // run records differ only by the thread count).
        let pa = load_detector_checkpoint(&dir_serial.path().join(&serial.checkpoint)).unwrap().1;
        let pb = load_detector_checkpoint(&dir_par.path().join(&parallel.checkpoint)).unwrap().1;
        assert_eq!(pa, pb);
        assert_eq!(serial.final_map, parallel.final_map);
    }
}
