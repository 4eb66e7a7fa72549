// Scratch: criterion-9 style variance check against the saved teacher.
use fine_imitate_core::analysis::per_channel_variance;
use fine_imitate_core::data::{generate, DatasetSpec};
use fine_imitate_core::trainer::load_teacher;

fn main() {
    let teacher = load_teacher(std::path::Path::new("/tmp/bench/teacher2/checkpoint.json")).unwrap();
    let hard = DatasetSpec {
        seed: 5678,
        num_images: 10,
        min_objects: 2,
        max_objects: 5,
        min_size: 8.0,
        max_size: 20.0,
        crowding: 0.5,
        noise_sigma: 0.04,
        background_complexity: 0.8,
        ..Default::default()
    };
    let samples = generate(&hard).unwrap();
    for psi in [0.3, 0.5, 0.7] {
        let report = per_channel_variance(&teacher, &samples, psi).unwrap();
        println!(
            "psi {psi}: {:.1}% of {} channels have var_in < var_out (in {} / out {} locations)",
            report.fraction_in_lt_out * 100.0,
            report.channels.len(),
            report.locations_in,
            report.locations_out
        );
        if (psi - 0.5).abs() < 1e-9 {
            let mut ratios: Vec<(usize, f64, f64)> = report
                .channels
                .iter()
                .filter_map(|c| Some((c.channel, c.var_in?, c.var_out?)))
                .collect();
            ratios.sort_by(|a, b| (b.1 / b.2.max(1e-12)).partial_cmp(&(a.1 / a.2.max(1e-12))).unwrap());
            println!("  worst 6 channels (var_in >> var_out):");
            for &(c, vi, vo) in ratios.iter().take(6) {
                println!("    ch {c}: in {vi:.4} out {vo:.4} ratio {:.1}", vi / vo.max(1e-12));
            }
            println!("  best 6 channels (var_in << var_out):");
            for &(c, vi, vo) in ratios.iter().rev().take(6) {
                println!("    ch {c}: in {vi:.4} out {vo:.4} ratio {:.2}", vi / vo.max(1e-12));
            }
        }
    }
}
