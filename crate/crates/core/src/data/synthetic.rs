use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::numerics::Tensor;
use crate::rng::{derive_seed, Rng};

use super::Sample;

pub const CLASS_NAMES: [&str; 3] = ["circle", "square", "triangle"];

/// Parameters of the seeded synthetic shapes benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub seed: u64,
    pub num_images: usize,
    /// Square image edge in pixels.
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Shape sizes (diameter / side length) in pixels.
    pub min_size: f64,
    pub max_size: f64,
    /// Probability that an object is placed overlapping the previous one,
    /// producing the crowded instances near-object masks care about.
    pub crowding: f64,
    pub noise_sigma: f64,
    /// Background richness in [0, 1]: 0 is a flat field, higher values add
    /// low-frequency shading and dim distractor clutter (bars and dots that
    /// are not objects). Diverse backgrounds are what make near-object
    /// features comparatively stable, as in natural imagery.
    pub background_complexity: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            num_images: 100,
            image_size: 64,
            min_objects: 1,
            max_objects: 3,
            min_size: 10.0,
            max_size: 26.0,
            crowding: 0.3,
            noise_sigma: 0.02,
            background_complexity: 0.6,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_images == 0 || self.image_size < 16 {
            return Err(Error::InvalidArg(format!(
                "dataset needs num_images > 0 and image_size >= 16, got {} and {}",
                self.num_images, self.image_size
            )));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::InvalidArg(format!(
                "min_objects {} > max_objects {}",
                self.min_objects, self.max_objects
            )));
        }
        if !(4.0 <= self.min_size && self.min_size <= self.max_size && self.max_size <= self.image_size as f64 / 2.0) {
            return Err(Error::InvalidArg(format!(
                "need 4 <= min_size <= max_size <= image_size/2, got {} and {}",
                self.min_size, self.max_size
            )));
        }
        if !(0.0..=1.0).contains(&self.crowding) || self.noise_sigma < 0.0 {
            return Err(Error::InvalidArg("crowding must be in [0,1] and noise_sigma >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.background_complexity) {
            return Err(Error::InvalidArg("background_complexity must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Shape {
    class_id: usize,
    cx: f64,
    cy: f64,
    size: f64,
    intensity: f64,
}

impl Shape {
    fn covers(&self, px: usize, py: usize) -> bool {
        let x = px as f64 + 0.5;
        let y = py as f64 + 0.5;
        let half = self.size / 2.0;
        match self.class_id {
            // circle
            0 => {
                let dx = x - self.cx;
                let dy = y - self.cy;
                dx * dx + dy * dy <= half * half
            }
            // square
            1 => (x - self.cx).abs() <= half && (y - self.cy).abs() <= half,
            // triangle: apex up, base at the bottom
            _ => {
                let apex = (self.cx, self.cy - half);
                let left = (self.cx - half, self.cy + half);
                let right = (self.cx + half, self.cy + half);
                let sign = |a: (f64, f64), b: (f64, f64)| (x - b.0) * (a.1 - b.1) - (a.0 - b.0) * (y - b.1);
                let d1 = sign(apex, left);
                let d2 = sign(left, right);
                let d3 = sign(right, apex);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }
}

/// Generate the dataset. Fully determined by the spec: image `i` uses a
/// stream derived from `(seed, i)`, so any subrange regenerates identically.
/// Pixel values are quantized to the 8-bit grid so PNG export round-trips
/// losslessly.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.num_images);
    for i in 0..spec.num_images {
        samples.push(generate_one(spec, i));
    }
    Ok(samples)
}

fn generate_one(spec: &DatasetSpec, index: usize) -> Sample {
    let mut rng = Rng::new(derive_seed(spec.seed, index as u64));
    let n = spec.image_size;
    let mut image = render_background(spec, n, &mut rng);

    let requested = spec.min_objects + rng.range(spec.max_objects - spec.min_objects + 1);
    let mut shapes: Vec<Shape> = Vec::with_capacity(requested);
    let mut gts = Vec::with_capacity(requested);
    for obj in 0..requested {
        let mut placed = false;
        for _attempt in 0..20 {
            let size = rng.uniform(spec.min_size, spec.max_size);
            let half = size / 2.0;
            let crowd = obj > 0 && rng.next_f64() < spec.crowding;
            let (cx, cy) = if crowd {
                let prev = shapes[obj - 1];
                let dist = rng.uniform(0.4, 0.9) * (prev.size / 2.0 + half);
                let angle = rng.uniform(0.0, std::f64::consts::TAU);
                (prev.cx + dist * angle.cos(), prev.cy + dist * angle.sin())
            } else {
                (rng.uniform(half + 1.0, n as f64 - half - 1.0), rng.uniform(half + 1.0, n as f64 - half - 1.0))
            };
            if cx - half < 1.0 || cy - half < 1.0 || cx + half > n as f64 - 1.0 || cy + half > n as f64 - 1.0 {
                continue;
            }
            let shape = Shape {
                class_id: rng.range(3),
                cx,
                cy,
                size,
                intensity: rng.uniform(0.75, 0.95),
            };
            if let Some(gt) = render(&mut image, &shape) {
                shapes.push(shape);
                gts.push(gt);
                placed = true;
                break;
            }
        }
        if !placed {
            eprintln!(
                "warning: image {index}: placed {}/{requested} objects after bounded retries",
                shapes.len()
            );
            break;
        }
    }

    // Additive noise, then clamp and snap to the 8-bit grid.
    for v in image.data_mut() {
        let noisy = *v + spec.noise_sigma * rng.normal();
        *v = (noisy.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }

    Sample {
        image,
        gts,
        image_id: format!("img_{index:05}"),
    }
}

/// Textured background scaled by `background_complexity`: multi-scale value
/// noise everywhere plus clutter primitives (bars, dots, rings) that are
/// never annotated. Backgrounds must stay feature-active and diverse or the
/// benchmark degenerates into blank-field detection.
fn render_background(spec: &DatasetSpec, n: usize, rng: &mut Rng) -> Tensor {
    let complexity = spec.background_complexity;
    let base = rng.uniform(0.15, 0.35);
    let mut image = Tensor::from_fn(&[n, n, 1], |_| base);

    // Smooth value noise at three length scales.
    for (cell, amp_scale) in [(8usize, 0.05), (16, 0.07), (32, 0.09)] {
        let amp = complexity * amp_scale;
        if amp == 0.0 {
            continue;
        }
        let gw = n / cell + 2;
        let knots: Vec<f64> = (0..gw * gw).map(|_| rng.uniform(-1.0, 1.0)).collect();
        for x in 0..n {
            for y in 0..n {
                let fx = x as f64 / cell as f64;
                let fy = y as f64 / cell as f64;
                let (ix, iy) = (fx as usize, fy as usize);
                let (tx, ty) = (fx - ix as f64, fy - iy as f64);
                let sx = tx * tx * (3.0 - 2.0 * tx);
                let sy = ty * ty * (3.0 - 2.0 * ty);
                let v00 = knots[ix * gw + iy];
                let v10 = knots[(ix + 1) * gw + iy];
                let v01 = knots[ix * gw + iy + 1];
                let v11 = knots[(ix + 1) * gw + iy + 1];
                let v = v00 * (1.0 - sx) * (1.0 - sy) + v10 * sx * (1.0 - sy) + v01 * (1.0 - sx) * sy + v11 * sx * sy;
                let cur = image.get3(x, y, 0);
                image.set3(x, y, 0, (cur + amp * v).clamp(0.0, 1.0));
            }
        }
    }

    // Micro-shapes: filled primitives below the annotated size range,
    // scattered densely. They look like distant objects, so the channels
    // that discriminate real objects stay active (and variable) on
    // background cells.
    let n_micro = (40.0 * complexity).round() as usize;
    for _ in 0..n_micro {
        let shape = Shape {
            class_id: rng.range(3),
            cx: rng.uniform(0.0, n as f64),
            cy: rng.uniform(0.0, n as f64),
            size: rng.uniform(2.5, 6.0),
            intensity: 0.0, // unused; drawn additively below
        };
        let contrast = rng.uniform(0.2, 0.5) * if rng.next_f64() < 0.3 { -1.0 } else { 1.0 };
        let half = shape.size / 2.0;
        let x_lo = ((shape.cx - half - 1.0).floor().max(0.0) as usize).min(n);
        let x_hi = (((shape.cx + half + 1.0).ceil()).max(0.0) as usize).min(n);
        let y_lo = ((shape.cy - half - 1.0).floor().max(0.0) as usize).min(n);
        let y_hi = (((shape.cy + half + 1.0).ceil()).max(0.0) as usize).min(n);
        for px in x_lo..x_hi {
            for py in y_lo..y_hi {
                if shape.covers(px, py) {
                    let v = image.get3(px, py, 0);
                    image.set3(px, py, 0, (v + contrast).clamp(0.0, 1.0));
                }
            }
        }
    }

    // Distractor clutter: bars, dots, and rings. Contrast overlaps the
    // object range so background cells stay feature-active; rings are
    // object-like but hollow, giving hard negatives.
    let n_clutter = (16.0 * complexity).round() as usize;
    for _ in 0..n_clutter {
        let contrast = rng.uniform(0.15, 0.5) * if rng.next_f64() < 0.4 { -1.0 } else { 1.0 };
        let kind = rng.range(3);
        if kind == 2 {
            // Ring: annulus of pixel centers.
            let cx = rng.uniform(0.0, n as f64);
            let cy = rng.uniform(0.0, n as f64);
            let r = rng.uniform(3.0, 8.0);
            let half_width = rng.uniform(0.5, 1.2);
            let x_lo = ((cx - r - 2.0).floor().max(0.0) as usize).min(n);
            let x_hi = (((cx + r + 2.0).ceil()).max(0.0) as usize).min(n);
            let y_lo = ((cy - r - 2.0).floor().max(0.0) as usize).min(n);
            let y_hi = (((cy + r + 2.0).ceil()).max(0.0) as usize).min(n);
            for px in x_lo..x_hi {
                for py in y_lo..y_hi {
                    let dx = px as f64 + 0.5 - cx;
                    let dy = py as f64 + 0.5 - cy;
                    let dist = (dx * dx + dy * dy).sqrt();
                    if (dist - r).abs() <= half_width {
                        let v = image.get3(px, py, 0);
                        image.set3(px, py, 0, (v + contrast).clamp(0.0, 1.0));
                    }
                }
            }
            continue;
        }
        if kind == 0 {
            // Bar: distance-to-segment test.
            let x0 = rng.uniform(0.0, n as f64);
            let y0 = rng.uniform(0.0, n as f64);
            let len = rng.uniform(6.0, 28.0);
            let angle = rng.uniform(0.0, std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let thickness = rng.uniform(0.6, 2.4);
            let x1 = x0 + len * dx;
            let y1 = y0 + len * dy;
            let lo = |v: f64| (v.floor().max(0.0) as usize).min(n);
            let hi = |v: f64| (v.ceil().max(0.0) as usize).min(n);
            let (sx, ex) = (lo(x0.min(x1) - thickness - 1.0), hi(x0.max(x1) + thickness + 1.0));
            let (sy, ey) = (lo(y0.min(y1) - thickness - 1.0), hi(y0.max(y1) + thickness + 1.0));
            for px in sx..ex {
                for py in sy..ey {
                    let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                    let t = (((cx - x0) * dx + (cy - y0) * dy) / len).clamp(0.0, 1.0);
                    let (qx, qy) = (x0 + t * len * dx, y0 + t * len * dy);
                    let dist = ((cx - qx).powi(2) + (cy - qy).powi(2)).sqrt();
                    if dist <= thickness {
                        let v = image.get3(px, py, 0);
                        image.set3(px, py, 0, (v + contrast).clamp(0.0, 1.0));
                    }
                }
            }
        } else {
            // Dot.
            let cx = rng.uniform(0.0, n as f64);
            let cy = rng.uniform(0.0, n as f64);
            let r = rng.uniform(0.8, 2.4);
            let x_lo = ((cx - r - 1.0).floor().max(0.0) as usize).min(n);
            let x_hi = (((cx + r + 1.0).ceil()).max(0.0) as usize).min(n);
            let y_lo = ((cy - r - 1.0).floor().max(0.0) as usize).min(n);
            let y_hi = (((cy + r + 1.0).ceil()).max(0.0) as usize).min(n);
            for px in x_lo..x_hi {
                for py in y_lo..y_hi {
                    let dx = px as f64 + 0.5 - cx;
                    let dy = py as f64 + 0.5 - cy;
                    if dx * dx + dy * dy <= r * r {
                        let v = image.get3(px, py, 0);
                        image.set3(px, py, 0, (v + contrast).clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    image
}

/// Draw a shape with max blending and return its tight bounding box, or
/// `None` when nothing rasterized.
fn render(image: &mut Tensor, shape: &Shape) -> Option<BBox> {
    let n = image.dims()[0];
    let scan_x1 = ((shape.cx - shape.size / 2.0).floor().max(0.0)) as usize;
    let scan_y1 = ((shape.cy - shape.size / 2.0).floor().max(0.0)) as usize;
    let scan_x2 = ((shape.cx + shape.size / 2.0).ceil() as usize).min(n);
    let scan_y2 = ((shape.cy + shape.size / 2.0).ceil() as usize).min(n);
    let mut extent: Option<(usize, usize, usize, usize)> = None;
    for px in scan_x1..scan_x2 {
        for py in scan_y1..scan_y2 {
            if shape.covers(px, py) {
                let v = image.get3(px, py, 0);
                image.set3(px, py, 0, v.max(shape.intensity));
                extent = Some(match extent {
                    None => (px, py, px, py),
                    Some((x1, y1, x2, y2)) => (x1.min(px), y1.min(py), x2.max(px), y2.max(py)),
                });
            }
        }
    }
    let (x1, y1, x2, y2) = extent?;
    BBox::with_class(x1 as f64, y1 as f64, (x2 + 1) as f64, (y2 + 1) as f64, shape.class_id).ok()
}
