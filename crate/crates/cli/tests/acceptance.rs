//! Acceptance suite. One test per criterion; each prints a PASS line with
//! its measured numbers (run with `-- --nocapture` to see them inline).
//!
//! Criteria 6-9 share one expensive fixture: the pinned synthetic benchmark
//! (500 train / 100 test images at 64x64), a teacher trained on it, and
//! 3-seed student runs for {plain, psi=0, psi=0.5, psi=1}. Everything is
//! seeded, so reruns reproduce the same numbers exactly.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use fine_imitate_core::analysis::{per_channel_variance, psi_sweep};
use fine_imitate_core::data::{generate, DatasetSpec, Sample};
use fine_imitate_core::detector::{
    assign_targets, backward, brute_force_nms, detection_loss, decode_deltas, encode_deltas, evaluate_ap, forward,
    greedy_nms, AssignThresholds, Detection, DetectorConfig, DetectorParams, SamplingConfig,
};
use fine_imitate_core::geometry::{iou, AnchorGrid, BBox};
use fine_imitate_core::imitation::{
    adapt, adapt_backward, imitation_loss, AdaptationLayer, DistillConfig, MaskMode,
};
use fine_imitate_core::mask::{
    brute_force_mask, estimate_mask, estimate_mask_hard, gt_projection_mask, ImitationMask, MaskConfig,
};
use fine_imitate_core::numerics::{grad_check, LayerParams, Tensor};
use fine_imitate_core::rng::Rng;
use fine_imitate_core::trainer::{
    distill_train, load_teacher, make_student, train_teacher, TeacherBundle, TrainConfig, TrainData,
};

// ---------------------------------------------------------------------------
// Pinned benchmark definition (criteria 6-9).
// ---------------------------------------------------------------------------

const BENCH_TRAIN_SEED: u64 = 1234;
const BENCH_TEST_SEED: u64 = 5678;
const BENCH_TEACHER_SEED: u64 = 42;
const BENCH_STUDENT_SEEDS: [u64; 3] = [1, 2, 3];
const BENCH_TEACHER_ITERS: usize = 6000;
const BENCH_STUDENT_ITERS: usize = 4000;
const BENCH_LAMBDA: f64 = 0.005;

fn bench_dataset_spec(seed: u64, num_images: usize) -> DatasetSpec {
    DatasetSpec {
        seed,
        num_images,
        image_size: 64,
        min_objects: 2,
        max_objects: 5,
        min_size: 8.0,
        max_size: 20.0,
        crowding: 0.5,
        noise_sigma: 0.04,
        background_complexity: 0.8,
    }
}

fn bench_teacher_config() -> DetectorConfig {
    DetectorConfig {
        backbone_widths: vec![16, 32, 64, 64],
        total_stride: 8,
        num_classes: 3,
        anchor_scales: vec![10.0, 16.0, 24.0],
        anchor_ratios: vec![1.0],
        pos_iou: 0.55,
        neg_iou: 0.5,
    }
}

fn bench_train_config(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.05,
        momentum: 0.9,
        iterations,
        batch_size: 8,
        seed,
        eval_every: 0,
        threads: 2,
        ..Default::default()
    }
}

struct Benchmark {
    teacher: TeacherBundle,
    teacher_map: f64,
    test_set: Vec<Sample>,
    /// Final mAP per seed.
    plain: Vec<f64>,
    psi_zero: Vec<f64>,
    psi_half: Vec<f64>,
    psi_one: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn benchmark() -> &'static Benchmark {
    static FIXTURE: OnceLock<Benchmark> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let train_set = generate(&bench_dataset_spec(BENCH_TRAIN_SEED, 500)).expect("train set");
        let test_set = generate(&bench_dataset_spec(BENCH_TEST_SEED, 100)).expect("test set");
        let data = TrainData {
            train: &train_set,
            test: &test_set,
        };

        let teacher_cfg = bench_teacher_config();
        let teacher_record = train_teacher(
            &teacher_cfg,
            &bench_train_config(BENCH_TEACHER_ITERS, BENCH_TEACHER_SEED),
            &data,
            &dir.path().join("teacher"),
        )
        .expect("teacher training");
        let teacher = load_teacher(&dir.path().join("teacher").join(&teacher_record.checkpoint)).expect("teacher load");

        let student_cfg = make_student(&teacher_cfg, 0.25).expect("student config");

        // Plain (ground truth only) per seed.
        let mut plain = Vec::new();
        for &seed in &BENCH_STUDENT_SEEDS {
            let record = train_teacher(
                &student_cfg,
                &bench_train_config(BENCH_STUDENT_ITERS, seed),
                &data,
                &dir.path().join(format!("plain_{seed}")),
            )
            .expect("plain student training");
            plain.push(record.final_map);
        }

        // Imitated variants via the psi sweep (psi = 0, 0.5, 1).
        let mut base = bench_train_config(BENCH_STUDENT_ITERS, 0);
        base.distill = Some(DistillConfig {
            lambda: BENCH_LAMBDA,
            psi: 0.5,
            mask_mode: MaskMode::Adaptive,
        });
        let sweep = psi_sweep(
            &[0.0, 0.5, 1.0],
            &BENCH_STUDENT_SEEDS,
            &teacher,
            &student_cfg,
            &base,
            &data,
            &dir.path().join("sweep"),
        )
        .expect("psi sweep");
        let series = |idx: usize| -> Vec<f64> {
            sweep.points[idx]
                .per_seed
                .iter()
                .map(|s| s.map.expect("no diverged runs in the pinned benchmark"))
                .collect()
        };

        Benchmark {
            teacher,
            teacher_map: teacher_record.final_map,
            test_set,
            plain,
            psi_zero: series(0),
            psi_half: series(1),
            psi_one: series(2),
        }
    })
}

// ---------------------------------------------------------------------------
// Criterion 1: mask oracle equivalence on 1,000 random scenes in < 10 s.
// ---------------------------------------------------------------------------

/// Test-local reference for the hard-threshold mask (triple loop).
fn oracle_hard_mask(gts: &[BBox], grid: &AnchorGrid, f_const: f64) -> ImitationMask {
    let mut values = vec![false; grid.feat_w * grid.feat_h];
    for gt in gts {
        for i in 0..grid.feat_w {
            for j in 0..grid.feat_h {
                for k in 0..grid.k() {
                    if iou(gt, grid.anchor(i, j, k)) > f_const {
                        values[i * grid.feat_h + j] = true;
                    }
                }
            }
        }
    }
    ImitationMask::from_values(grid.feat_w, grid.feat_h, values).unwrap()
}

/// Test-local reference for the gt-projection mask.
fn oracle_projection_mask(gts: &[BBox], stride: usize, feat_w: usize, feat_h: usize) -> ImitationMask {
    let s = stride as f64;
    let mut values = vec![false; feat_w * feat_h];
    for gt in gts {
        for i in 0..feat_w {
            for j in 0..feat_h {
                let x1 = (i as f64) * s;
                let y1 = (j as f64) * s;
                let ow = (x1 + s).min(gt.x2) - x1.max(gt.x1);
                let oh = (y1 + s).min(gt.y2) - y1.max(gt.y1);
                if ow > 0.0 && oh > 0.0 {
                    values[i * feat_h + j] = true;
                }
            }
        }
    }
    ImitationMask::from_values(feat_w, feat_h, values).unwrap()
}

fn random_scene(rng: &mut Rng) -> (Vec<BBox>, AnchorGrid) {
    let w = 1 + rng.range(8);
    let h = 1 + rng.range(8);
    let stride = [4usize, 8, 16][rng.range(3)];
    let n_scales = 1 + rng.range(3);
    let n_ratios = 1 + rng.range(3);
    let scales: Vec<f64> = (0..n_scales).map(|_| rng.uniform(3.0, 40.0)).collect();
    let ratios: Vec<f64> = (0..n_ratios).map(|_| rng.uniform(0.3, 3.0)).collect();
    let grid = AnchorGrid::build(w, h, stride, &scales, &ratios).unwrap();
    let extent = (w.max(h) * stride) as f64;
    let n_gts = rng.range(6);
    let gts = (0..n_gts)
        .map(|g| {
            let x1 = rng.uniform(-0.1 * extent, 0.9 * extent);
            let y1 = rng.uniform(-0.1 * extent, 0.9 * extent);
            BBox::with_class(x1, y1, x1 + rng.uniform(1.0, 0.5 * extent), y1 + rng.uniform(1.0, 0.5 * extent), g % 3)
                .unwrap()
        })
        .collect();
    (gts, grid)
}

#[test]
fn criterion_1_mask_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = Rng::new(0xACCE97);
    for trial in 0..1000 {
        let (gts, grid) = random_scene(&mut rng);
        let psi = rng.uniform(0.0, 1.0);
        let (fast, _) = estimate_mask(&gts, &grid, &MaskConfig::new(psi).unwrap());
        assert_eq!(fast, brute_force_mask(&gts, &grid, psi), "adaptive mask trial {trial}");

        let f_const = rng.uniform(0.0, 1.0);
        let hard = estimate_mask_hard(&gts, &grid, f_const).unwrap();
        assert_eq!(hard, oracle_hard_mask(&gts, &grid, f_const), "hard mask trial {trial}");

        let proj = gt_projection_mask(&gts, grid.stride, grid.feat_w, grid.feat_h).unwrap();
        assert_eq!(
            proj,
            oracle_projection_mask(&gts, grid.stride, grid.feat_w, grid.feat_h),
            "projection mask trial {trial}"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "mask oracle sweep took {elapsed:.1} s (budget 10 s)");
    println!("ACCEPTANCE 1 (mask oracle equivalence): PASS — 1000 scenes, 3 generators, {elapsed:.2} s");
}

// ---------------------------------------------------------------------------
// Criterion 2: mask endpoints and monotonicity on 200 random scenes.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_mask_endpoints_and_monotonicity() {
    let mut rng = Rng::new(0xACCE98);
    for trial in 0..200 {
        let (gts, grid) = random_scene(&mut rng);
        let cells = grid.feat_w * grid.feat_h;

        let (all, _) = estimate_mask(&gts, &grid, &MaskConfig::new(0.0).unwrap());
        assert_eq!(all.n_positive(), cells, "psi=0 must fill the map (trial {trial})");

        let (none, _) = estimate_mask(&gts, &grid, &MaskConfig::new(1.0).unwrap());
        assert_eq!(none.n_positive(), 0, "psi=1 must keep nothing (trial {trial})");

        let a = rng.uniform(0.01, 1.0);
        let b = rng.uniform(0.01, 1.0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m_lo = estimate_mask(&gts, &grid, &MaskConfig::new(lo).unwrap()).0;
        let m_hi = estimate_mask(&gts, &grid, &MaskConfig::new(hi).unwrap()).0;
        assert!(m_lo.contains(&m_hi), "mask(psi={lo}) must contain mask(psi={hi}) (trial {trial})");
        assert!(m_lo.n_positive() >= m_hi.n_positive());
    }
    println!("ACCEPTANCE 2 (mask endpoints + monotonicity): PASS — 200 scenes");
}

// ---------------------------------------------------------------------------
// Criterion 3: imitation loss value, gradient, and lambda = 0 identity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_imitation_loss_correctness() {
    let mut rng = Rng::new(0xACCE99);

    // Value matches direct summation (rel tol 1e-12).
    for _ in 0..100 {
        let (w, h, c) = (1 + rng.range(6), 1 + rng.range(6), 1 + rng.range(8));
        let a = Tensor::from_fn(&[w, h, c], |_| rng.uniform(-2.0, 2.0));
        let t = Tensor::from_fn(&[w, h, c], |_| rng.uniform(-2.0, 2.0));
        let values: Vec<bool> = (0..w * h).map(|_| rng.next_f64() < 0.6).collect();
        let mask = ImitationMask::from_values(w, h, values).unwrap();
        let (loss, _) = imitation_loss(&a, &t, &mask).unwrap();

        let mut direct = 0.0;
        for i in 0..w {
            for j in 0..h {
                if mask.get(i, j) {
                    for cc in 0..c {
                        let d = a.get3(i, j, cc) - t.get3(i, j, cc);
                        direct += d * d;
                    }
                }
            }
        }
        let expect = if mask.n_positive() == 0 {
            0.0
        } else {
            direct / (2.0 * mask.n_positive() as f64)
        };
        if expect == 0.0 {
            assert_eq!(loss, 0.0);
        } else {
            assert!((loss - expect).abs() / expect.abs() < 1e-12, "{loss} vs {expect}");
        }
    }

    // Gradient vs central finite differences (rel err < 1e-6).
    let a = Tensor::from_fn(&[4, 4, 3], |_| rng.uniform(-1.5, 1.5));
    let t = Tensor::from_fn(&[4, 4, 3], |_| rng.uniform(-1.5, 1.5));
    let values: Vec<bool> = (0..16).map(|i| i % 3 != 0).collect();
    let mask = ImitationMask::from_values(4, 4, values).unwrap();
    let (_, grad) = imitation_loss(&a, &t, &mask).unwrap();
    let eps = 1e-5;
    let mut max_rel = 0.0f64;
    for i in 0..a.len() {
        let mut plus = a.clone();
        plus.data_mut()[i] += eps;
        let mut minus = a.clone();
        minus.data_mut()[i] -= eps;
        let num = (imitation_loss(&plus, &t, &mask).unwrap().0 - imitation_loss(&minus, &t, &mask).unwrap().0) / (2.0 * eps);
        let denom = grad.data()[i].abs().max(num.abs()).max(1e-6);
        max_rel = max_rel.max((grad.data()[i] - num).abs() / denom);
    }
    assert!(max_rel < 1e-6, "imitation gradient max rel err {max_rel}");

    // Lambda = 0 trajectory identity with plain training (bit-exact).
    let train_set = generate(&DatasetSpec {
        seed: 31,
        num_images: 12,
        image_size: 32,
        min_size: 8.0,
        max_size: 14.0,
        ..Default::default()
    })
    .unwrap();
    let data = TrainData {
        train: &train_set,
        test: &train_set[..4],
    };
    let teacher_cfg = DetectorConfig {
        backbone_widths: vec![6, 8, 12],
        total_stride: 8,
        anchor_scales: vec![8.0, 12.0],
        anchor_ratios: vec![1.0],
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut tc = TrainConfig {
        lr: 0.02,
        iterations: 25,
        batch_size: 4,
        seed: 7,
        ..Default::default()
    };
    train_teacher(&teacher_cfg, &tc, &data, &dir.path().join("t")).unwrap();
    let teacher = load_teacher(&dir.path().join("t/checkpoint.json")).unwrap();
    let student_cfg = make_student(&teacher_cfg, 0.5).unwrap();

    tc.seed = 99;
    let plain = train_teacher(&student_cfg, &tc, &data, &dir.path().join("plain")).unwrap();
    let mut tc0 = tc.clone();
    tc0.distill = Some(DistillConfig {
        lambda: 0.0,
        ..Default::default()
    });
    let distilled = distill_train(&teacher, &student_cfg, &tc0, &data, &dir.path().join("d0")).unwrap();
    assert_eq!(plain.losses.len(), distilled.losses.len());
    for (p, d) in plain.losses.iter().zip(&distilled.losses) {
        assert_eq!(p.l_gt.to_bits(), d.l_gt.to_bits(), "l_gt trajectories must be bit-identical");
        assert_eq!(p.l_total.to_bits(), d.l_total.to_bits());
    }
    assert_eq!(plain.final_map.to_bits(), distilled.final_map.to_bits());
    let plain_params = fine_imitate_core::trainer::load_detector_checkpoint(&dir.path().join("plain/checkpoint.json"))
        .unwrap()
        .1;
    let distilled_params = fine_imitate_core::trainer::load_detector_checkpoint(&dir.path().join("d0/checkpoint.json"))
        .unwrap()
        .1;
    assert_eq!(plain_params, distilled_params, "lambda = 0 must reproduce plain training exactly");

    println!("ACCEPTANCE 3 (imitation loss correctness): PASS — value rel 1e-12, grad rel {max_rel:.2e}, lambda-0 identity bit-exact");
}

// ---------------------------------------------------------------------------
// Criterion 4: numeric core — conv oracle and composite grad check in < 60 s.
// ---------------------------------------------------------------------------

/// Test-local direct convolution (independent of the production loops).
fn oracle_conv(input: &Tensor, params: &LayerParams, stride: usize) -> Tensor {
    let (w, h, cin) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (kh, kw, cout) = (params.kh(), params.kw(), params.cout());
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let (wo, ho) = (w.div_ceil(stride), h.div_ceil(stride));
    let mut out = Tensor::zeros(&[wo, ho, cout]);
    for xo in 0..wo {
        for yo in 0..ho {
            for co in 0..cout {
                let mut acc = params.biases.data()[co];
                for u in 0..kh {
                    for v in 0..kw {
                        for ci in 0..cin {
                            let xi = (xo * stride + v) as isize - pw as isize;
                            let yi = (yo * stride + u) as isize - ph as isize;
                            if xi >= 0 && (xi as usize) < w && yi >= 0 && (yi as usize) < h {
                                acc += input.get3(xi as usize, yi as usize, ci) * params.kernels.get4(u, v, ci, co);
                            }
                        }
                    }
                }
                out.set3(xo, yo, co, acc);
            }
        }
    }
    out
}

#[test]
fn criterion_4_numeric_core() {
    let start = Instant::now();
    let mut rng = Rng::new(0xACCE9A);

    // Convolution equals the naive oracle for all shapes <= 8x8x4.
    let mut checked = 0usize;
    for w in 1..=8usize {
        for h in 1..=8usize {
            for cin in 1..=4usize {
                if (w + h + cin) % 3 != 0 {
                    continue; // subsample the lattice, keep 1..8 coverage
                }
                for &k in &[1usize, 3, 5] {
                    for &stride in &[1usize, 2] {
                        let input = Tensor::from_fn(&[w, h, cin], |_| rng.uniform(-1.0, 1.0));
                        let params = LayerParams::from_parts(
                            Tensor::from_fn(&[k, k, cin, 2], |_| rng.uniform(-1.0, 1.0)),
                            Tensor::from_fn(&[2], |_| rng.uniform(-1.0, 1.0)),
                        )
                        .unwrap();
                        let fast = fine_imitate_core::numerics::conv_forward(&input, &params, stride).unwrap();
                        let oracle = oracle_conv(&input, &params, stride);
                        assert!(
                            fast.max_abs_diff(&oracle) < 1e-9,
                            "conv mismatch at {w}x{h}x{cin} k{k} s{stride}"
                        );
                        checked += 1;
                    }
                }
            }
        }
    }

    // Full-model grad check on the composite loss L = L_gt + lambda * L_im.
    let sample = generate(&DatasetSpec {
        seed: 13,
        num_images: 1,
        image_size: 32,
        min_objects: 2,
        max_objects: 3,
        min_size: 8.0,
        max_size: 14.0,
        ..Default::default()
    })
    .unwrap()
    .remove(0);
    let teacher_cfg = DetectorConfig {
        backbone_widths: vec![6, 8, 12],
        total_stride: 8,
        anchor_scales: vec![8.0, 12.0],
        anchor_ratios: vec![1.0],
        ..Default::default()
    };
    let student_cfg = DetectorConfig {
        backbone_widths: vec![3, 4, 6],
        ..teacher_cfg.clone()
    };
    let teacher_params = DetectorParams::init(&teacher_cfg, 5).unwrap();
    let mut student_params = DetectorParams::init(&student_cfg, 6).unwrap();
    let mut adaptation = AdaptationLayer::init(6, 12, 7).unwrap();
    let lambda = 0.5;

    let grid = student_cfg.anchor_grid(32, 32).unwrap();
    let assignment = assign_targets(
        &grid,
        &sample.gts,
        &AssignThresholds {
            pos_iou: 0.7,
            neg_iou: 0.3,
        },
    );
    let teacher_guided = forward(&sample.image, &teacher_cfg, &teacher_params).unwrap().guided;
    let mask = estimate_mask(&sample.gts, &grid, &MaskConfig::new(0.5).unwrap()).0;

    let pass = forward(&sample.image, &student_cfg, &student_params).unwrap();
    let mut sampler = Rng::new(3);
    let det = detection_loss(
        &pass.cls_logits,
        &pass.reg_preds,
        &assignment,
        &grid,
        student_cfg.num_classes,
        &SamplingConfig::default(),
        &mut sampler,
    )
    .unwrap();
    let adapted = adapt(&pass.guided, &adaptation).unwrap();
    let (_, g_adapted) = imitation_loss(&adapted, &teacher_guided, &mask).unwrap();
    let mut scaled = g_adapted;
    scaled.scale(lambda);
    let (g_guided, adapt_grads) = adapt_backward(&pass.guided, &adaptation, &scaled).unwrap();
    let det_grads = backward(&pass, &student_cfg, &student_params, &det.grad_cls, &det.grad_reg, Some(&g_guided)).unwrap();

    let mut analytic = det_grads.flatten();
    analytic.extend_from_slice(adapt_grads.kernels.data());
    analytic.extend_from_slice(adapt_grads.biases.data());
    let mut theta = student_params.flatten();
    theta.extend_from_slice(adaptation.params.kernels.data());
    theta.extend_from_slice(adaptation.params.biases.data());

    let n_student = student_params.num_params();
    let loss_fn = |flat: &[f64]| -> f64 {
        student_params.load_flat(&flat[..n_student]).unwrap();
        let nk = adaptation.params.kernels.len();
        adaptation.params.kernels.data_mut().copy_from_slice(&flat[n_student..n_student + nk]);
        adaptation.params.biases.data_mut().copy_from_slice(&flat[n_student + nk..]);
        let pass = forward(&sample.image, &student_cfg, &student_params).unwrap();
        let mut sampler = Rng::new(3);
        let det = detection_loss(
            &pass.cls_logits,
            &pass.reg_preds,
            &assignment,
            &grid,
            student_cfg.num_classes,
            &SamplingConfig::default(),
            &mut sampler,
        )
        .unwrap();
        let adapted = adapt(&pass.guided, &adaptation).unwrap();
        let (l_im, _) = imitation_loss(&adapted, &teacher_guided, &mask).unwrap();
        det.loss + lambda * l_im
    };
    let report = grad_check(&theta, &analytic, loss_fn, 1e-5, 250, 0xF00D).unwrap();
    assert!(
        report.max_rel_error < 1e-3,
        "composite grad check failed: {} at {}",
        report.max_rel_error,
        report.worst_param_index
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "numeric core checks took {elapsed:.1} s (budget 60 s)");
    println!(
        "ACCEPTANCE 4 (numeric core): PASS — {checked} conv shapes vs oracle, composite grad rel {:.2e}, {elapsed:.1} s",
        report.max_rel_error
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: detector metrics — NMS oracle, AP hand case, delta round trip.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_detector_metrics() {
    let mut rng = Rng::new(0xACCE9B);

    // NMS equals the brute-force greedy oracle for <= 10 boxes, 1000 trials.
    for trial in 0..1000 {
        let n = 1 + rng.range(10);
        let boxes: Vec<BBox> = (0..n)
            .map(|_| {
                let x1 = rng.uniform(0.0, 50.0);
                let y1 = rng.uniform(0.0, 50.0);
                BBox::new(x1, y1, x1 + rng.uniform(2.0, 25.0), y1 + rng.uniform(2.0, 25.0)).unwrap()
            })
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let thresh = rng.uniform(0.05, 0.95);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(
            greedy_nms(&boxes, &order, thresh),
            brute_force_nms(&boxes, &scores, thresh),
            "NMS mismatch at trial {trial}"
        );
    }

    // AP hand case: one gt, FP scored above TP -> 0.5 exactly.
    let dets = vec![vec![
        Detection {
            bbox: BBox::with_class(40.0, 40.0, 50.0, 50.0, 0).unwrap(),
            class_id: 0,
            score: 0.9,
        },
        Detection {
            bbox: BBox::with_class(0.0, 0.0, 10.0, 10.0, 0).unwrap(),
            class_id: 0,
            score: 0.8,
        },
    ]];
    let gts = vec![vec![BBox::with_class(0.0, 0.0, 10.0, 10.0, 0).unwrap()]];
    let report = evaluate_ap(&dets, &gts, 0.5, 1);
    assert_eq!(report.per_class[0], Some(0.5), "FP-above-TP must give AP exactly 0.5");

    // Box delta encode/decode round trip, abs tol 1e-9.
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let ax = rng.uniform(0.0, 60.0);
        let ay = rng.uniform(0.0, 60.0);
        let anchor = BBox::new(ax, ay, ax + rng.uniform(3.0, 30.0), ay + rng.uniform(3.0, 30.0)).unwrap();
        let gx = rng.uniform(0.0, 60.0);
        let gy = rng.uniform(0.0, 60.0);
        let gt = BBox::new(gx, gy, gx + rng.uniform(3.0, 30.0), gy + rng.uniform(3.0, 30.0)).unwrap();
        let back = decode_deltas(&encode_deltas(&gt, &anchor), &anchor).unwrap();
        for (a, b) in [(back.x1, gt.x1), (back.y1, gt.y1), (back.x2, gt.x2), (back.y2, gt.y2)] {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "delta round trip worst abs err {worst}");

    println!("ACCEPTANCE 5 (detector metrics): PASS — 1000 NMS trials, AP hand case exact, round-trip {worst:.1e}");
}

// ---------------------------------------------------------------------------
// Criteria 6-8: desk-scale training trends on the pinned benchmark.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_distillation_gain() {
    let b = benchmark();
    let plain = mean(&b.plain);
    let imitated = mean(&b.psi_half);
    let delta = imitated - plain;
    assert!(
        delta >= 0.02,
        "imitated 0.25x student must exceed plain by >= 2 mAP points: plain {:.4} {:?}, imitated {:.4} {:?}",
        plain,
        b.plain,
        imitated,
        b.psi_half
    );
    println!(
        "ACCEPTANCE 6 (distillation gain): PASS — teacher {:.4}, plain {plain:.4}, imitated {imitated:.4}, delta +{delta:.4}",
        b.teacher_map
    );
}

#[test]
fn criterion_7_full_feature_imitation_harm() {
    let b = benchmark();
    let full = mean(&b.psi_zero);
    let fine = mean(&b.psi_half);
    assert!(
        full < fine,
        "full-feature imitation (psi=0) must underperform fine-grained (psi=0.5): {full:.4} vs {fine:.4}"
    );
    println!("ACCEPTANCE 7 (full-feature harm): PASS — psi=0 {full:.4} < psi=0.5 {fine:.4}");
}

#[test]
fn criterion_8_psi_one_degeneracy() {
    let b = benchmark();
    let psi_one = mean(&b.psi_one);
    let plain = mean(&b.plain);
    let gap = (psi_one - plain).abs();
    assert!(
        gap <= 0.01,
        "psi=1 must sit within 1 mAP point of the gt-only baseline: {psi_one:.4} vs {plain:.4}"
    );
    println!("ACCEPTANCE 8 (psi=1 degeneracy): PASS — psi=1 {psi_one:.4} vs plain {plain:.4} (gap {gap:.4})");
}

// ---------------------------------------------------------------------------
// Criterion 9: per-channel variance trend on the trained teacher.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_variance_trend() {
    let b = benchmark();
    let report = per_channel_variance(&b.teacher, &b.test_set[..10], 0.5).unwrap();
    assert!(
        report.fraction_in_lt_out >= 0.70,
        "need >= 70% of channels with var_in < var_out, got {:.1}%",
        report.fraction_in_lt_out * 100.0
    );
    println!(
        "ACCEPTANCE 9 (variance trend): PASS — {:.1}% of {} channels have var_in < var_out",
        report.fraction_in_lt_out * 100.0,
        report.channels.len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: CLI determinism — identical metric files across reruns.
// ---------------------------------------------------------------------------

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fine-imitate"))
}

fn run_cli(args: &[&str]) {
    let out = cli().args(args).output().expect("spawn CLI");
    assert!(
        out.status.success(),
        "CLI {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Byte-compare every file below the two directories except manifests
/// (which carry timestamps by design).
fn assert_dirs_equal(a: &Path, b: &Path) {
    let mut names: Vec<String> = Vec::new();
    collect_files(a, a, &mut names);
    let mut names_b: Vec<String> = Vec::new();
    collect_files(b, b, &mut names_b);
    names.sort();
    names_b.sort();
    assert_eq!(names, names_b, "different artifact sets under {a:?} vs {b:?}");
    for rel in &names {
        let fa = std::fs::read(a.join(rel)).unwrap();
        let fb = std::fs::read(b.join(rel)).unwrap();
        assert_eq!(fa, fb, "artifact {rel} differs between reruns");
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else if path.file_name().is_some_and(|n| n != "manifest.json") {
            out.push(path.strip_prefix(root).unwrap().to_string_lossy().into_owned());
        }
    }
}

#[test]
fn criterion_10_cli_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
  "detector": {"backbone_widths": [4, 6, 8], "total_stride": 8,
               "anchor_scales": [8.0, 12.0], "anchor_ratios": [1.0],
               "pos_iou": 0.55, "neg_iou": 0.5},
  "train": {"iterations": 8, "batch_size": 2, "lr": 0.02}
}"#,
    )
    .unwrap();

    let gen = |out: &Path| {
        run_cli(&[
            "generate-data",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "11",
            "--override",
            "num_images=10",
            "--override",
            "image_size=32",
            "--override",
            "min_size=8",
            "--override",
            "max_size=14",
        ]);
    };
    let data_a = tmp.path().join("data_a");
    let data_b = tmp.path().join("data_b");
    gen(&data_a);
    gen(&data_b);
    assert_dirs_equal(&data_a, &data_b);

    let teach = |out: &Path| {
        run_cli(&[
            "train-teacher",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            data_a.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
        ]);
    };
    let teacher_a = tmp.path().join("teacher_a");
    let teacher_b = tmp.path().join("teacher_b");
    teach(&teacher_a);
    teach(&teacher_b);
    assert_dirs_equal(&teacher_a, &teacher_b);

    let teacher_ckpt = teacher_a.join("checkpoint.json");
    let distill = |out: &Path| {
        run_cli(&[
            "distill",
            "--config",
            cfg.to_str().unwrap(),
            "--override",
            "student_width=0.5",
            "--teacher",
            teacher_ckpt.to_str().unwrap(),
            "--data",
            data_a.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "4",
        ]);
    };
    let student_a = tmp.path().join("student_a");
    let student_b = tmp.path().join("student_b");
    distill(&student_a);
    distill(&student_b);
    assert_dirs_equal(&student_a, &student_b);

    let sweep = |out: &Path| {
        run_cli(&[
            "sweep-psi",
            "--config",
            cfg.to_str().unwrap(),
            "--override",
            "student_width=0.5",
            "--override",
            "train.iterations=4",
            "--teacher",
            teacher_ckpt.to_str().unwrap(),
            "--data",
            data_a.to_str().unwrap(),
            "--psis",
            "0,0.5,1",
            "--seeds",
            "1,2",
            "--out",
            out.to_str().unwrap(),
        ]);
    };
    let sweep_a = tmp.path().join("sweep_a");
    let sweep_b = tmp.path().join("sweep_b");
    sweep(&sweep_a);
    sweep(&sweep_b);
    assert_dirs_equal(&sweep_a, &sweep_b);

    let variance = |out: &Path| {
        run_cli(&[
            "analyze-variance",
            "--teacher",
            teacher_ckpt.to_str().unwrap(),
            "--data",
            data_a.to_str().unwrap(),
            "--psi",
            "0.5",
            "--images",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
    };
    let var_a = tmp.path().join("var_a");
    let var_b = tmp.path().join("var_b");
    variance(&var_a);
    variance(&var_b);
    assert_dirs_equal(&var_a, &var_b);

    let visualize = |out: &Path| {
        run_cli(&[
            "visualize-mask",
            "--annotations",
            data_a.join("annotations.jsonl").to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--psi",
            "0.5",
            "--out",
            out.to_str().unwrap(),
        ]);
    };
    let vis_a = tmp.path().join("vis_a");
    let vis_b = tmp.path().join("vis_b");
    visualize(&vis_a);
    visualize(&vis_b);
    assert_dirs_equal(&vis_a, &vis_b);

    println!("ACCEPTANCE 10 (CLI determinism): PASS — 6 commands, byte-identical metric files across reruns");
}
