use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::SampleMeta;

/// Mapping from KITTI object types to class ids. Types not listed (including
/// `DontCare`) are skipped.
#[derive(Debug, Clone)]
pub struct KittiClassMap {
    names: Vec<String>,
}

impl Default for KittiClassMap {
    fn default() -> Self {
        KittiClassMap {
            names: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
        }
    }
}

impl KittiClassMap {
    pub fn new(names: &[&str]) -> KittiClassMap {
        KittiClassMap {
            names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn class_id(&self, kitti_type: &str) -> Option<usize> {
        self.names.iter().position(|n| n.eq_ignore_ascii_case(kitti_type))
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }
}

/// Parse a directory of KITTI label files (`<image id>.txt`, one object per
/// line, whitespace-separated: type, truncated, occluded, alpha, then the
/// 2-D bbox `x1 y1 x2 y2`, ...). Only the class subset in `classes` is kept.
/// Image paths are assumed to live in a sibling `image_2/` directory.
pub fn load_kitti_labels(dir: &Path, classes: &KittiClassMap) -> Result<Vec<SampleMeta>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();

    let image_dir = dir.parent().unwrap_or_else(|| Path::new(".")).join("image_2");
    let mut out = Vec::with_capacity(files.len());
    for path in files {
        let text = std::fs::read_to_string(&path)?;
        let mut boxes = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 8 {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: idx + 1,
                    msg: format!("expected at least 8 whitespace-separated fields, got {}", fields.len()),
                });
            }
            let Some(class_id) = classes.class_id(fields[0]) else {
                continue;
            };
            let mut coords = [0.0f64; 4];
            for (i, c) in coords.iter_mut().enumerate() {
                *c = fields[4 + i].parse().map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: idx + 1,
                    msg: format!("bbox field {}: {e}", 4 + i),
                })?;
            }
            boxes.push(
                BBox::with_class(coords[0], coords[1], coords[2], coords[3], class_id).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: idx + 1,
                    msg: e.to_string(),
                })?,
            );
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.push(SampleMeta {
            image_path: image_dir.join(format!("{stem}.png")),
            boxes,
            image_id: stem,
        });
    }
    Ok(out)
}
