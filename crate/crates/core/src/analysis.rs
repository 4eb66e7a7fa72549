//! Diagnostic studies: the psi sweep, per-channel feature variance inside
//! vs outside the imitation region, and the mask-generator baseline
//! comparison. All runs are reproducible from (config, seeds) and reports
//! embed their config snapshot.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::detector::{forward, DetectorConfig};
use crate::error::{Error, Result};
use crate::imitation::{DistillConfig, MaskMode};
use crate::mask::{estimate_mask, ImitationMask, MaskConfig};
use crate::numerics::Tensor;
use crate::trainer::{distill_train, train_teacher, TeacherBundle, TrainConfig, TrainData};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Final mAP; `None` records a diverged run instead of dropping it.
    pub map: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub psi: f64,
    pub mean_map: Option<f64>,
    pub per_seed: Vec<SeedResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub config: serde_json::Value,
}

fn mean_of(per_seed: &[SeedResult]) -> Option<f64> {
    let present: Vec<f64> = per_seed.iter().filter_map(|s| s.map).collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Run one distillation per (psi, seed) and collect final mAP on the held
/// out set. `psis` must be strictly increasing.
pub fn psi_sweep(
    psis: &[f64],
    seeds: &[u64],
    teacher: &TeacherBundle,
    student_cfg: &DetectorConfig,
    base_train: &TrainConfig,
    data: &TrainData,
    out_dir: &Path,
) -> Result<SweepResult> {
    if psis.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArg("psi sweep needs at least one psi and one seed".into()));
    }
    if psis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArg(format!("psi values must be strictly increasing, got {psis:?}")));
    }
    if psis.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArg("psi values must lie in [0, 1]".into()));
    }

    let lambda = base_train.distill.map(|d| d.lambda).unwrap_or(1.0);
    let mut points = Vec::with_capacity(psis.len());
    for &psi in psis {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut train = base_train.clone();
            train.seed = seed;
            train.distill = Some(DistillConfig {
                lambda,
                psi,
                mask_mode: MaskMode::Adaptive,
            });
            let run_dir = out_dir.join(format!("psi_{psi}")).join(format!("seed_{seed}"));
            let map = match distill_train(teacher, student_cfg, &train, data, &run_dir) {
                Ok(record) => Some(record.final_map),
                Err(Error::Diverged { .. }) => None,
                Err(e) => return Err(e),
            };
            per_seed.push(SeedResult { seed, map });
        }
        points.push(SweepPoint {
            psi,
            mean_map: mean_of(&per_seed),
            per_seed,
        });
    }
    Ok(SweepResult {
        points,
        config: serde_json::json!({
            "student": student_cfg,
            "train": base_train,
            "seeds": seeds,
        }),
    })
}

/// Wide-format CSV: one row per psi, mean first, then one column per seed.
pub fn sweep_to_csv(result: &SweepResult) -> String {
    let mut out = String::from("psi,mean_map");
    if let Some(first) = result.points.first() {
        for s in &first.per_seed {
            out.push_str(&format!(",map_seed_{}", s.seed));
        }
    }
    out.push('\n');
    for p in &result.points {
        out.push_str(&format!("{}", p.psi));
        match p.mean_map {
            Some(m) => out.push_str(&format!(",{m}")),
            None => out.push(','),
        }
        for s in &p.per_seed {
            match s.map {
                Some(m) => out.push_str(&format!(",{m}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelVariance {
    pub channel: usize,
    pub var_in: Option<f64>,
    pub var_out: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceReport {
    pub channels: Vec<ChannelVariance>,
    /// Fraction of channels (with both sides defined) where the masked
    /// variance is strictly smaller than the unmasked one.
    pub fraction_in_lt_out: f64,
    pub num_images: usize,
    pub locations_in: usize,
    pub locations_out: usize,
    pub psi: f64,
}

/// Population variance of per-channel activations pooled over masked
/// (var_in) and unmasked (var_out) locations across all given feature maps.
/// Exposed separately so it can be verified on hand-built inputs.
pub fn masked_channel_variance(feats: &[Tensor], masks: &[ImitationMask]) -> Result<Vec<ChannelVariance>> {
    if feats.is_empty() || feats.len() != masks.len() {
        return Err(Error::InvalidArg(format!(
            "need matching nonempty feature/mask lists, got {} and {}",
            feats.len(),
            masks.len()
        )));
    }
    let c = feats[0].dims()[2];
    let mut in_values: Vec<Vec<f64>> = vec![Vec::new(); c];
    let mut out_values: Vec<Vec<f64>> = vec![Vec::new(); c];
    for (feat, mask) in feats.iter().zip(masks) {
        let (w, h, fc) = (feat.dims()[0], feat.dims()[1], feat.dims()[2]);
        if fc != c {
            return Err(Error::shape("masked_channel_variance", format!("{c} channels"), format!("{fc}")));
        }
        if (mask.w, mask.h) != (w, h) {
            return Err(Error::shape(
                "masked_channel_variance",
                format!("{w}x{h} mask"),
                format!("{}x{}", mask.w, mask.h),
            ));
        }
        for i in 0..w {
            for j in 0..h {
                let bucket = if mask.get(i, j) { &mut in_values } else { &mut out_values };
                for cc in 0..c {
                    bucket[cc].push(feat.get3(i, j, cc));
                }
            }
        }
    }

    let variance = |vals: &[f64]| -> Option<f64> {
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        Some(vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
    };

    Ok((0..c)
        .map(|cc| ChannelVariance {
            channel: cc,
            var_in: variance(&in_values[cc]),
            var_out: variance(&out_values[cc]),
        })
        .collect())
}

/// Teacher-side variance study: run the given images through the teacher,
/// estimate masks at `psi` from their ground truths, and pool per-channel
/// variances inside and outside the imitation region.
pub fn per_channel_variance(teacher: &TeacherBundle, samples: &[Sample], psi: f64) -> Result<VarianceReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArg("variance analysis needs at least one image".into()));
    }
    let mask_cfg = MaskConfig::new(psi)?;
    let mut feats = Vec::with_capacity(samples.len());
    let mut masks = Vec::with_capacity(samples.len());
    let mut locations_in = 0usize;
    let mut locations_out = 0usize;
    for s in samples {
        let (w, h) = (s.image.dims()[0], s.image.dims()[1]);
        let grid = teacher.cfg.anchor_grid(w, h)?;
        let pass = forward(&s.image, &teacher.cfg, &teacher.params)?;
        let (mask, _) = estimate_mask(&s.gts, &grid, &mask_cfg);
        locations_in += mask.n_positive();
        locations_out += mask.w * mask.h - mask.n_positive();
        feats.push(pass.guided);
        masks.push(mask);
    }
    let channels = masked_channel_variance(&feats, &masks)?;
    let both: Vec<&ChannelVariance> = channels.iter().filter(|c| c.var_in.is_some() && c.var_out.is_some()).collect();
    let fraction_in_lt_out = if both.is_empty() {
        0.0
    } else {
        both.iter().filter(|c| c.var_in.unwrap() < c.var_out.unwrap()).count() as f64 / both.len() as f64
    };
    Ok(VarianceReport {
        channels,
        fraction_in_lt_out,
        num_images: samples.len(),
        locations_in,
        locations_out,
        psi,
    })
}

/// CSV scatter: one row per channel.
pub fn variance_to_csv(report: &VarianceReport) -> String {
    let mut out = String::from("channel,var_in,var_out\n");
    for c in &report.channels {
        out.push_str(&format!("{}", c.channel));
        match c.var_in {
            Some(v) => out.push_str(&format!(",{v}")),
            None => out.push(','),
        }
        match c.var_out {
            Some(v) => out.push_str(&format!(",{v}")),
            None => out.push(','),
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub mean_map: Option<f64>,
    pub per_seed: Vec<SeedResult>,
    /// Keys of the train config that differ from the shared base; must be
    /// at most {"distill"} by construction.
    pub config_diff: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub variants: Vec<VariantResult>,
    pub config: serde_json::Value,
}

/// Mask-generator comparison at identical training budget: no imitation,
/// fine-grained (psi = 0.5), full-feature (psi = 0), and gt-projection.
/// Only the distill field varies across variants; the per-variant config
/// diff recorded in the report asserts that.
pub fn baseline_comparison(
    seeds: &[u64],
    teacher: &TeacherBundle,
    student_cfg: &DetectorConfig,
    base_train: &TrainConfig,
    data: &TrainData,
    out_dir: &Path,
) -> Result<ComparisonTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidArg("baseline comparison needs at least one seed".into()));
    }
    let lambda = base_train.distill.map(|d| d.lambda).unwrap_or(1.0);
    let variants: Vec<(&str, Option<DistillConfig>)> = vec![
        ("no-imitation", None),
        (
            "fine-grained",
            Some(DistillConfig {
                lambda,
                psi: 0.5,
                mask_mode: MaskMode::Adaptive,
            }),
        ),
        (
            "full-feature",
            Some(DistillConfig {
                lambda,
                psi: 0.0,
                mask_mode: MaskMode::Adaptive,
            }),
        ),
        (
            "gt-projection",
            Some(DistillConfig {
                lambda,
                psi: 0.5,
                mask_mode: MaskMode::GtProjection,
            }),
        ),
    ];

    let mut base_snapshot = base_train.clone();
    base_snapshot.distill = None;
    let base_json = serde_json::to_value(&base_snapshot)?;

    let mut results = Vec::with_capacity(variants.len());
    for (name, distill) in variants {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut config_diff = Vec::new();
        for &seed in seeds {
            let mut train = base_train.clone();
            train.seed = seed;
            train.distill = distill;
            if config_diff.is_empty() {
                config_diff = json_diff_keys(&base_json, &serde_json::to_value(&{
                    let mut t = train.clone();
                    t.seed = base_snapshot.seed;
                    t
                })?);
                if config_diff.iter().any(|k| k != "distill") {
                    return Err(Error::InvalidArg(format!(
                        "variant {name} changes more than the mask generator: {config_diff:?}"
                    )));
                }
            }
            let run_dir = out_dir.join(name).join(format!("seed_{seed}"));
            let outcome = match distill {
                None => train_teacher(student_cfg, &train, data, &run_dir),
                Some(_) => distill_train(teacher, student_cfg, &train, data, &run_dir),
            };
            let map = match outcome {
                Ok(record) => Some(record.final_map),
                Err(Error::Diverged { .. }) => None,
                Err(e) => return Err(e),
            };
            per_seed.push(SeedResult { seed, map });
        }
        results.push(VariantResult {
            name: name.to_string(),
            mean_map: mean_of(&per_seed),
            per_seed,
            config_diff,
        });
    }
    Ok(ComparisonTable {
        variants: results,
        config: serde_json::json!({
            "student": student_cfg,
            "train": base_train,
            "seeds": seeds,
        }),
    })
}

/// Top-level keys whose values differ between two JSON objects.
fn json_diff_keys(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    let (Some(ao), Some(bo)) = (a.as_object(), b.as_object()) else {
        return vec!["<non-object>".to_string()];
    };
    let mut keys: Vec<String> = ao.keys().chain(bo.keys()).cloned().collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| ao.get(k) != bo.get(k)).collect()
}

/// CSV: one row per variant, mean first, then per-seed columns.
pub fn comparison_to_csv(table: &ComparisonTable) -> String {
    let mut out = String::from("variant,mean_map");
    if let Some(first) = table.variants.first() {
        for s in &first.per_seed {
            out.push_str(&format!(",map_seed_{}", s.seed));
        }
    }
    out.push('\n');
    for v in &table.variants {
        out.push_str(&v.name);
        match v.mean_map {
            Some(m) => out.push_str(&format!(",{m}")),
            None => out.push(','),
        }
        for s in &v.per_seed {
            match s.map {
                Some(m) => out.push_str(&format!(",{m}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
