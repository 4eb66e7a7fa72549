use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Annotation metadata for one image; pixels are loaded lazily.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub image_path: PathBuf,
    pub boxes: Vec<BBox>,
    pub image_id: String,
}

#[derive(Serialize, Deserialize)]
struct Line {
    image: String,
    boxes: Vec<[f64; 5]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_id: Option<String>,
}

/// Parse a JSON-lines annotation file: one object per line,
/// `{"image": <path>, "boxes": [[x1, y1, x2, y2, class_id], ...]}`.
/// Image paths are resolved relative to the file's directory; `image_id`
/// defaults to the image file stem.
pub fn load_jsonl(path: &Path) -> Result<Vec<SampleMeta>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let mut boxes = Vec::with_capacity(parsed.boxes.len());
        for b in &parsed.boxes {
            let class_id = b[4];
            if class_id < 0.0 || class_id.fract() != 0.0 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("class_id must be a non-negative integer, got {class_id}"),
                });
            }
            boxes.push(BBox::with_class(b[0], b[1], b[2], b[3], class_id as usize).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: e.to_string(),
            })?);
        }
        let image_path = base.join(&parsed.image);
        let image_id = parsed.image_id.unwrap_or_else(|| {
            Path::new(&parsed.image)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| parsed.image.clone())
        });
        out.push(SampleMeta {
            image_path,
            boxes,
            image_id,
        });
    }
    Ok(out)
}

/// Write annotations in the format [`load_jsonl`] reads. `image` fields are
/// written as given (typically relative paths like `images/img_00000.png`).
pub fn save_jsonl(path: &Path, entries: &[(String, &SampleMeta)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (image_rel, meta) in entries {
        let line = Line {
            image: image_rel.clone(),
            boxes: meta
                .boxes
                .iter()
                .map(|b| [b.x1, b.y1, b.x2, b.y2, b.class_id as f64])
                .collect(),
            image_id: Some(meta.image_id.clone()),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}
