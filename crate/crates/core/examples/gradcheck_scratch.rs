// Scratch composite-loss gradient check (student + adaptation through
// detection + imitation losses).
use fine_imitate_core::data::{generate, DatasetSpec};
use fine_imitate_core::detector::{
    assign_targets, backward, detection_loss, forward, AssignThresholds, DetectorConfig, DetectorParams,
    SamplingConfig,
};
use fine_imitate_core::imitation::{adapt, adapt_backward, imitation_loss, AdaptationLayer};
use fine_imitate_core::mask::{estimate_mask, MaskConfig};
use fine_imitate_core::rng::Rng;

fn main() {
    let spec = DatasetSpec {
        seed: 9,
        num_images: 1,
        image_size: 32,
        min_size: 8.0,
        max_size: 14.0,
        ..Default::default()
    };
    let sample = generate(&spec).unwrap().remove(0);

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
    let lambda = 0.7;

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

    // Analytic gradients.
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
    let (l_im, g_adapted) = imitation_loss(&adapted, &teacher_guided, &mask).unwrap();
    let mut scaled = g_adapted;
    scaled.scale(lambda);
    let (g_guided, adapt_grads) = adapt_backward(&pass.guided, &adaptation, &scaled).unwrap();
    let det_grads = backward(&pass, &student_cfg, &student_params, &det.grad_cls, &det.grad_reg, Some(&g_guided)).unwrap();
    println!("analytic L = {} (det {}, imit {})", det.loss + lambda * l_im, det.loss, l_im);

    let mut analytic = det_grads.flatten();
    analytic.extend_from_slice(adapt_grads.kernels.data());
    analytic.extend_from_slice(adapt_grads.biases.data());

    let mut theta = student_params.flatten();
    theta.extend_from_slice(adaptation.params.kernels.data());
    theta.extend_from_slice(adaptation.params.biases.data());

    let n_student = student_params.num_params();
    let mut eval = |flat: &[f64]| -> f64 {
        student_params.load_flat(&flat[..n_student]).unwrap();
        let nk = adaptation.params.kernels.len();
        adaptation.params.kernels.data_mut().copy_from_slice(&flat[n_student..n_student + nk]);
        adaptation
            .params
            .biases
            .data_mut()
            .copy_from_slice(&flat[n_student + nk..]);
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

    let eps = 1e-5;
    let mut rng = Rng::new(77);
    let picks = rng.sample_indices(theta.len(), 300);
    let mut worst = 0.0f64;
    let mut worst_i = 0;
    let mut work = theta.clone();
    for &i in &picks {
        let orig = work[i];
        work[i] = orig + eps;
        let plus = eval(&work);
        work[i] = orig - eps;
        let minus = eval(&work);
        work[i] = orig;
        let num = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(num.abs()).max(1e-6);
        let rel = (analytic[i] - num).abs() / denom;
        if rel > worst {
            worst = rel;
            worst_i = i;
        }
    }
    println!(
        "composite grad check over {} params: max rel err {:.3e} at {} (student has {})",
        picks.len(),
        worst,
        worst_i,
        n_student
    );
}
