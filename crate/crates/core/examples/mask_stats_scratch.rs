// Scratch: mask coverage and feature magnitude statistics.
use fine_imitate_core::data::{generate, DatasetSpec};
use fine_imitate_core::detector::forward;
use fine_imitate_core::mask::{estimate_mask, MaskConfig};
use fine_imitate_core::trainer::load_teacher;

fn main() {
    let spec = DatasetSpec {
        seed: 1234,
        num_images: 100,
        ..Default::default()
    };
    let samples = generate(&spec).unwrap();
    let teacher = load_teacher(std::path::Path::new("/tmp/bench/teacher2/checkpoint.json")).unwrap();

    for psi in [0.2, 0.5, 0.8] {
        let mut nps = Vec::new();
        for s in &samples {
            let grid = teacher.cfg.anchor_grid(64, 64).unwrap();
            let (mask, _) = estimate_mask(&s.gts, &grid, &MaskConfig::new(psi).unwrap());
            nps.push(mask.n_positive());
        }
        nps.sort_unstable();
        let mean: f64 = nps.iter().sum::<usize>() as f64 / nps.len() as f64;
        println!(
            "psi {psi}: N_p mean {mean:.1} / 64 cells, median {}, min {}, max {}",
            nps[nps.len() / 2],
            nps[0],
            nps[nps.len() - 1]
        );
    }

    // Teacher feature magnitude on a few images.
    let mut all = Vec::new();
    for s in samples.iter().take(10) {
        let guided = forward(&s.image, &teacher.cfg, &teacher.params).unwrap().guided;
        all.extend_from_slice(guided.data());
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let maxv = all.iter().cloned().fold(0.0f64, f64::max);
    let zero_frac = all.iter().filter(|&&v| v == 0.0).count() as f64 / n;
    println!("teacher guided: mean {mean:.3}, std {:.3}, max {maxv:.3}, zero fraction {zero_frac:.3}", var.sqrt());
}
