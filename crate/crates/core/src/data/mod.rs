//! Datasets: the seeded synthetic shapes benchmark plus ingestion of
//! external annotations (JSON lines and KITTI label files).

mod jsonl;
mod kitti;
mod synthetic;

pub use jsonl::{load_jsonl, save_jsonl, SampleMeta};
pub use kitti::{load_kitti_labels, KittiClassMap};
pub use synthetic::{generate, DatasetSpec, CLASS_NAMES};

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::numerics::Tensor;

/// One image with its ground-truth boxes.
#[derive(Debug, Clone)]
pub struct Sample {
    /// `[W, H, 1]` grayscale, values in [0, 1].
    pub image: Tensor,
    pub gts: Vec<BBox>,
    pub image_id: String,
}

/// Load a grayscale PNG as a `[W, H, 1]` tensor with values in [0, 1].
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[w, h, 1]);
    for x in 0..w {
        for y in 0..h {
            t.set3(x, y, 0, img.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0);
        }
    }
    Ok(t)
}

/// Save a `[W, H, 1]` tensor as an 8-bit grayscale PNG.
pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    if image.dims().len() != 3 || image.dims()[2] != 1 {
        return Err(Error::shape("save_image", "[W, H, 1] image", format!("{:?}", image.dims())));
    }
    let (w, h) = (image.dims()[0], image.dims()[1]);
    let mut out = image::GrayImage::new(w as u32, h as u32);
    for x in 0..w {
        for y in 0..h {
            let v = (image.get3(x, y, 0).clamp(0.0, 1.0) * 255.0).round() as u8;
            out.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    out.save(path)?;
    Ok(())
}

/// Materialize sample metadata into full samples by loading image pixels.
pub fn load_samples(metas: &[SampleMeta]) -> Result<Vec<Sample>> {
    metas
        .iter()
        .map(|m| {
            Ok(Sample {
                image: load_image(&m.image_path)?,
                gts: m.boxes.clone(),
                image_id: m.image_id.clone(),
            })
        })
        .collect()
}
