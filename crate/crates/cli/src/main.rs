//! `fine-imitate`: train a desk-scale anchor-based detector, distill it into
//! width-multiplied students with masked feature imitation, and run the
//! mask/variance/sweep analyses. Every command writes its artifacts plus a
//! manifest into one output directory and is reproducible from (config,
//! seed).

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fine_imitate_core::analysis::{
    baseline_comparison, comparison_to_csv, per_channel_variance, psi_sweep, sweep_to_csv, variance_to_csv,
};
use fine_imitate_core::data::{generate, load_image, load_jsonl, load_samples, save_image, save_jsonl, Sample, SampleMeta};
use fine_imitate_core::detector::{decode_and_nms, forward, write_detections_jsonl};
use fine_imitate_core::imitation::DistillConfig;
use fine_imitate_core::mask::{estimate_mask, estimate_mask_hard, mask_to_overlay, render_overlay, MaskConfig};
use fine_imitate_core::trainer::{
    distill_train, load_detector_checkpoint, load_teacher, make_student, train_teacher, TrainData,
};

use config::{load_app_config, load_dataset_spec};
use manifest::ManifestWriter;

#[derive(Parser)]
#[command(name = "fine-imitate", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// JSON config file (missing fields fall back to defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts of this run.
    #[arg(long)]
    out: PathBuf,
    /// Seed shorthand (equivalent to an override of the relevant seed field).
    #[arg(long)]
    seed: Option<u64>,
    /// Config override as a dotted path, e.g. `train.lr=0.1`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded synthetic shapes dataset (PNGs + annotations).
    GenerateData {
        #[command(flatten)]
        common: CommonOpts,
        /// Dataset spec JSON (fields of DatasetSpec); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train a teacher detector on ground truth only.
    TrainTeacher {
        #[command(flatten)]
        common: CommonOpts,
        /// Directory with annotations.jsonl + images (training split).
        #[arg(long)]
        data: PathBuf,
        /// Held-out split for evaluation; training data is reused if absent.
        #[arg(long)]
        test_data: Option<PathBuf>,
    },
    /// Distill a frozen teacher into a student detector.
    Distill {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test_data: Option<PathBuf>,
    },
    /// Train one student per (psi, seed) and tabulate final mAP.
    SweepPsi {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test_data: Option<PathBuf>,
        /// Comma-separated, strictly increasing psi values.
        #[arg(long, value_delimiter = ',')]
        psis: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Also run the four mask-generator baselines at the same budget.
        #[arg(long)]
        baselines: bool,
    },
    /// Per-channel teacher feature variance inside vs outside the mask.
    AnalyzeVariance {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        psi: f64,
        /// Number of images sampled from the front of the dataset.
        #[arg(long, default_value_t = 10)]
        images: usize,
    },
    /// Overlay an imitation mask on an input image (PNG + JSON rectangles).
    VisualizeMask {
        #[command(flatten)]
        common: CommonOpts,
        /// Annotations JSONL holding the image path and its boxes.
        #[arg(long)]
        annotations: PathBuf,
        /// Image id within the annotations (first record if omitted).
        #[arg(long)]
        image_id: Option<String>,
        /// Adaptive thresholding factor.
        #[arg(long, conflicts_with = "hard_f")]
        psi: Option<f64>,
        /// Constant IOU threshold instead of the adaptive rule.
        #[arg(long)]
        hard_f: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenerateData { common, spec } => cmd_generate_data(&common, spec.as_deref()),
        Command::TrainTeacher {
            common,
            data,
            test_data,
        } => cmd_train_teacher(&common, &data, test_data.as_deref()),
        Command::Distill {
            common,
            teacher,
            data,
            test_data,
        } => cmd_distill(&common, &teacher, &data, test_data.as_deref()),
        Command::SweepPsi {
            common,
            teacher,
            data,
            test_data,
            psis,
            seeds,
            baselines,
        } => cmd_sweep_psi(&common, &teacher, &data, test_data.as_deref(), &psis, &seeds, baselines),
        Command::AnalyzeVariance {
            common,
            teacher,
            data,
            psi,
            images,
        } => cmd_analyze_variance(&common, &teacher, &data, psi, images),
        Command::VisualizeMask {
            common,
            annotations,
            image_id,
            psi,
            hard_f,
        } => cmd_visualize_mask(&common, &annotations, image_id.as_deref(), psi, hard_f),
    }
}

/// Load a dataset directory written by `generate-data` (or any directory
/// holding `annotations.jsonl` with image paths).
fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let annotations = dir.join("annotations.jsonl");
    let metas = load_jsonl(&annotations).with_context(|| format!("loading {}", annotations.display()))?;
    Ok(load_samples(&metas)?)
}

fn cmd_generate_data(common: &CommonOpts, spec_path: Option<&Path>) -> Result<()> {
    let mut overrides = common.overrides.clone();
    if let Some(cfg) = &common.config {
        // generate-data takes its spec via --spec; --config is accepted as an
        // alias for it to keep the flag surface uniform.
        if spec_path.is_none() {
            return cmd_generate_data(
                &CommonOpts {
                    config: None,
                    ..common.clone()
                },
                Some(cfg.as_path()),
            );
        }
        bail!("pass either --spec or --config, not both");
    }
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let spec = load_dataset_spec(spec_path, &overrides, None)?;
    let writer = ManifestWriter::start("generate-data", vec![spec.seed], &common.out, serde_json::to_value(&spec)?);

    let samples = generate(&spec)?;
    let image_dir = common.out.join("images");
    std::fs::create_dir_all(&image_dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let rel = format!("images/{}.png", s.image_id);
        save_image(&common.out.join(&rel), &s.image)?;
        entries.push((
            rel,
            SampleMeta {
                image_path: PathBuf::new(),
                boxes: s.gts.clone(),
                image_id: s.image_id.clone(),
            },
        ));
    }
    let entry_refs: Vec<(String, &SampleMeta)> = entries.iter().map(|(rel, m)| (rel.clone(), m)).collect();
    save_jsonl(&common.out.join("annotations.jsonl"), &entry_refs)?;
    std::fs::write(common.out.join("dataset_spec.json"), serde_json::to_string_pretty(&spec)?)?;
    writer.finish(&common.out)?;
    println!("wrote {} images to {}", samples.len(), common.out.display());
    Ok(())
}

fn load_train_data(data: &Path, test_data: Option<&Path>) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let train = load_dataset(data)?;
    let test = match test_data {
        Some(dir) => load_dataset(dir)?,
        None => train.clone(),
    };
    Ok((train, test))
}

/// Final test-set detections of a finished run, exported as JSONL.
fn export_detections(run_dir: &Path, checkpoint: &str, test: &[Sample]) -> Result<()> {
    let (cfg, params) = load_detector_checkpoint(&run_dir.join(checkpoint))?;
    let infer = fine_imitate_core::detector::InferenceConfig::default();
    let mut per_image = Vec::with_capacity(test.len());
    for s in test {
        let (w, h) = (s.image.dims()[0], s.image.dims()[1]);
        let grid = cfg.anchor_grid(w, h)?;
        let pass = forward(&s.image, &cfg, &params)?;
        let dets = decode_and_nms(&pass.cls_logits, &pass.reg_preds, &grid, cfg.num_classes, &infer, w, h)?;
        per_image.push((s.image_id.clone(), dets));
    }
    write_detections_jsonl(&run_dir.join("detections.jsonl"), &per_image)?;
    Ok(())
}

fn cmd_train_teacher(common: &CommonOpts, data: &Path, test_data: Option<&Path>) -> Result<()> {
    let cfg = load_app_config(common.config.as_deref(), &common.overrides, common.seed)?;
    if cfg.train.distill.is_some() {
        bail!("train-teacher does not distill; remove train.distill or use the distill command");
    }
    let writer = ManifestWriter::start(
        "train-teacher",
        vec![cfg.train.seed],
        &common.out,
        serde_json::to_value(&cfg)?,
    );
    let (train_set, test_set) = load_train_data(data, test_data)?;
    let record = train_teacher(
        &cfg.detector,
        &cfg.train,
        &TrainData {
            train: &train_set,
            test: &test_set,
        },
        &common.out,
    )?;
    export_detections(&common.out, &record.checkpoint, &test_set)?;
    writer.finish(&common.out)?;
    println!("final mAP {:.4} ({} iterations)", record.final_map, cfg.train.iterations);
    Ok(())
}

fn cmd_distill(common: &CommonOpts, teacher_path: &Path, data: &Path, test_data: Option<&Path>) -> Result<()> {
    let mut cfg = load_app_config(common.config.as_deref(), &common.overrides, common.seed)?;
    if cfg.train.distill.is_none() {
        cfg.train.distill = Some(DistillConfig::default());
    }
    let teacher = load_teacher(teacher_path)?;
    let student_cfg = match cfg.student_width {
        Some(width) => make_student(&teacher.cfg, width)?,
        None => cfg.detector.clone(),
    };
    let writer = ManifestWriter::start(
        "distill",
        vec![cfg.train.seed],
        &common.out,
        serde_json::json!({ "config": &cfg, "student": &student_cfg, "teacher": teacher_path.display().to_string() }),
    );
    let (train_set, test_set) = load_train_data(data, test_data)?;
    let record = distill_train(
        &teacher,
        &student_cfg,
        &cfg.train,
        &TrainData {
            train: &train_set,
            test: &test_set,
        },
        &common.out,
    )?;
    export_detections(&common.out, &record.checkpoint, &test_set)?;
    writer.finish(&common.out)?;
    println!("final mAP {:.4} ({} iterations)", record.final_map, cfg.train.iterations);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep_psi(
    common: &CommonOpts,
    teacher_path: &Path,
    data: &Path,
    test_data: Option<&Path>,
    psis: &[f64],
    seeds: &[u64],
    baselines: bool,
) -> Result<()> {
    let cfg = load_app_config(common.config.as_deref(), &common.overrides, common.seed)?;
    let teacher = load_teacher(teacher_path)?;
    let student_cfg = match cfg.student_width {
        Some(width) => make_student(&teacher.cfg, width)?,
        None => cfg.detector.clone(),
    };
    let writer = ManifestWriter::start(
        "sweep-psi",
        seeds.to_vec(),
        &common.out,
        serde_json::json!({ "config": &cfg, "student": &student_cfg, "psis": psis, "baselines": baselines }),
    );
    let (train_set, test_set) = load_train_data(data, test_data)?;
    let data_ref = TrainData {
        train: &train_set,
        test: &test_set,
    };

    let sweep = psi_sweep(psis, seeds, &teacher, &student_cfg, &cfg.train, &data_ref, &common.out.join("runs"))?;
    std::fs::write(common.out.join("sweep.csv"), sweep_to_csv(&sweep))?;
    std::fs::write(common.out.join("sweep.json"), serde_json::to_string_pretty(&sweep)?)?;

    if baselines {
        let table = baseline_comparison(seeds, &teacher, &student_cfg, &cfg.train, &data_ref, &common.out.join("baselines"))?;
        std::fs::write(common.out.join("baselines.csv"), comparison_to_csv(&table))?;
        std::fs::write(common.out.join("baselines.json"), serde_json::to_string_pretty(&table)?)?;
    }
    writer.finish(&common.out)?;
    for p in &sweep.points {
        println!("psi {:<5} mean mAP {:?}", p.psi, p.mean_map);
    }
    Ok(())
}

fn cmd_analyze_variance(common: &CommonOpts, teacher_path: &Path, data: &Path, psi: f64, images: usize) -> Result<()> {
    let teacher = load_teacher(teacher_path)?;
    let writer = ManifestWriter::start(
        "analyze-variance",
        vec![],
        &common.out,
        serde_json::json!({ "teacher": teacher_path.display().to_string(), "psi": psi, "images": images }),
    );
    let samples = load_dataset(data)?;
    if samples.len() < images {
        bail!("dataset has {} images, --images asked for {images}", samples.len());
    }
    let report = per_channel_variance(&teacher, &samples[..images], psi)?;
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("variance.csv"), variance_to_csv(&report))?;
    std::fs::write(common.out.join("variance.json"), serde_json::to_string_pretty(&report)?)?;
    writer.finish(&common.out)?;
    println!(
        "{}/{} channels with var_in < var_out ({:.1}%)",
        (report.fraction_in_lt_out * report.channels.len() as f64).round(),
        report.channels.len(),
        report.fraction_in_lt_out * 100.0
    );
    Ok(())
}

fn cmd_visualize_mask(
    common: &CommonOpts,
    annotations: &Path,
    image_id: Option<&str>,
    psi: Option<f64>,
    hard_f: Option<f64>,
) -> Result<()> {
    let cfg = load_app_config(common.config.as_deref(), &common.overrides, common.seed)?;
    let metas = load_jsonl(annotations)?;
    let meta = match image_id {
        Some(id) => metas
            .iter()
            .find(|m| m.image_id == id)
            .with_context(|| format!("image id {id:?} not found in {}", annotations.display()))?,
        None => metas.first().context("annotations file is empty")?,
    };
    let image = load_image(&meta.image_path)?;
    let (w, h) = (image.dims()[0], image.dims()[1]);
    let stride = cfg.detector.total_stride;
    if w % stride != 0 || h % stride != 0 {
        bail!("image {w}x{h} is not divisible by the detector stride {stride}");
    }
    let grid = cfg.detector.anchor_grid(w, h)?;

    let mask = match (psi, hard_f) {
        (Some(p), None) => estimate_mask(&meta.boxes, &grid, &MaskConfig::new(p)?).0,
        (None, Some(f)) => estimate_mask_hard(&meta.boxes, &grid, f)?,
        (None, None) => bail!("pass either --psi or --hard-f"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with prevents this"),
    };
    let writer = ManifestWriter::start(
        "visualize-mask",
        vec![],
        &common.out,
        serde_json::json!({
            "annotations": annotations.display().to_string(),
            "image_id": meta.image_id,
            "psi": psi,
            "hard_f": hard_f,
            "detector": &cfg.detector,
        }),
    );

    let rects = mask_to_overlay(&mask, stride, w, h);
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(
        common.out.join("overlay.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "image_id": meta.image_id,
            "n_positive": mask.n_positive(),
            "cells": rects,
        }))?,
    )?;
    let rgb = render_overlay(&image, &rects, 0.45)?;
    rgb.save(common.out.join("overlay.png")).map_err(fine_imitate_core::Error::from)?;
    writer.finish(&common.out)?;
    println!("{} highlighted cells -> {}", rects.len(), common.out.join("overlay.png").display());
    Ok(())
}
