// Scratch teacher-training sweep.
use std::time::Instant;

use fine_imitate_core::data::{generate, DatasetSpec};
use fine_imitate_core::detector::DetectorConfig;
use fine_imitate_core::trainer::{train_teacher, TrainConfig, TrainData};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let pos_iou: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.7);
    let neg_iou: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.3);

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

    let widths: Vec<usize> = args
        .get(6)
        .map(|s| s.split('-').map(|w| w.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![16, 32, 64, 64]);
    let teacher_cfg = DetectorConfig {
        pos_iou,
        neg_iou,
        backbone_widths: widths,
        ..Default::default()
    };
    let tc = TrainConfig {
        lr,
        iterations: iters,
        batch_size: batch,
        seed: 42,
        eval_every: (iters / 10).max(1),
        threads: 2,
        ..Default::default()
    };

    let t0 = Instant::now();
    let record = train_teacher(&teacher_cfg, &tc, &data, &std::path::PathBuf::from("/tmp/bench/teacher2")).unwrap();
    println!("teacher {:.1}s  lr {lr} batch {batch}", t0.elapsed().as_secs_f64());
    for p in &record.map_points {
        println!("  iter {:5}  mAP {:.4}", p.iteration, p.map);
    }
    let n = record.losses.len();
    println!(
        "  loss first 10 avg {:.4}, last 10 avg {:.4}",
        record.losses[..10].iter().map(|l| l.l_total).sum::<f64>() / 10.0,
        record.losses[n - 10..].iter().map(|l| l.l_total).sum::<f64>() / 10.0
    );
}
