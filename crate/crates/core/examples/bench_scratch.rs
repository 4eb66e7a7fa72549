// Scratch experiment runner: plain vs imitated students against the saved
// teacher at /tmp/bench/teacher2.
use std::time::Instant;

use fine_imitate_core::data::{generate, DatasetSpec};
use fine_imitate_core::imitation::{DistillConfig, MaskMode};
use fine_imitate_core::trainer::{distill_train, load_teacher, make_student, train_teacher, TrainConfig, TrainData};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let lambda: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let psi: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let width: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let seeds: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2);
    let skip_plain: bool = args.get(6).map(|s| s == "skip_plain").unwrap_or(false);
    let max_samples: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(64);
    let teacher_path: String = args
        .get(8)
        .cloned()
        .unwrap_or_else(|| "/tmp/bench/teacher2/checkpoint.json".to_string());

    let hard = DatasetSpec {
        seed: 1234,
        num_images: 500,
        min_objects: 2,
        max_objects: 5,
        min_size: 8.0,
        max_size: 20.0,
        crowding: 0.5,
        noise_sigma: 0.04,
        background_complexity: 0.8,
        ..Default::default()
    };
    let train_set = generate(&hard).unwrap();
    let test_set = generate(&DatasetSpec {
        seed: 5678,
        num_images: 100,
        ..hard.clone()
    })
    .unwrap();
    let data = TrainData {
        train: &train_set,
        test: &test_set,
    };

    let teacher = load_teacher(std::path::Path::new(&teacher_path)).unwrap();
    let student_cfg = make_student(&teacher.cfg, width).unwrap();
    println!(
        "teacher widths {:?} -> student {:?} (lambda {lambda}, psi {psi}, iters {iters})",
        teacher.cfg.backbone_widths, student_cfg.backbone_widths
    );

    let mut tc = TrainConfig {
        lr: 0.05,
        iterations: iters,
        batch_size: 8,
        eval_every: 0,
        threads: 2,
        ..Default::default()
    };
    tc.sampling.max_samples = max_samples;

    let mut plain_maps = Vec::new();
    let mut imit_maps = Vec::new();
    for seed in 1..=seeds as u64 {
        let t1 = Instant::now();
        let mut plain_tc = tc.clone();
        plain_tc.seed = seed;
        let plain_map = if skip_plain {
            f64::NAN
        } else {
            train_teacher(
                &student_cfg,
                &plain_tc,
                &data,
                &std::path::PathBuf::from(format!("/tmp/bench/plain_w{width}_{seed}")),
            )
            .unwrap()
            .final_map
        };

        let mut distill_tc = plain_tc.clone();
        distill_tc.distill = Some(DistillConfig {
            lambda,
            psi,
            mask_mode: MaskMode::Adaptive,
        });
        let imitated = distill_train(
            &teacher,
            &student_cfg,
            &distill_tc,
            &data,
            &std::path::PathBuf::from(format!("/tmp/bench/distill_{seed}")),
        )
        .unwrap();
        println!(
            "seed {seed}: plain {plain_map:.4}, imitated {:.4} (delta {:+.4}), l_im first/last {:.4}/{:.4}, {:.1}s",
            imitated.final_map,
            imitated.final_map - plain_map,
            imitated.losses[0].l_imitation,
            imitated.losses.last().unwrap().l_imitation,
            t1.elapsed().as_secs_f64()
        );
        plain_maps.push(plain_map);
        imit_maps.push(imitated.final_map);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "means: plain {:.4}, imitated {:.4}, delta {:+.4}",
        mean(&plain_maps),
        mean(&imit_maps),
        mean(&imit_maps) - mean(&plain_maps)
    );
}
