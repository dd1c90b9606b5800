//! Image-folder datasets described by a manifest CSV.
//!
//! Manifests need `path` and `class` columns. Optional columns:
//! `given_domain`, `sample_id` (defaults to the path), `artifact`, `split`.
//! Paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledImage};
use crate::error::{PldgError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    #[serde(default)]
    pub sample_id: Option<String>,
    pub path: String,
    pub class: usize,
    #[serde(default)]
    pub given_domain: Option<usize>,
    #[serde(default)]
    pub artifact: Option<usize>,
    #[serde(default)]
    pub split: Option<String>,
}

fn decode(path: &Path, image_size: usize) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| PldgError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut rgb = img.to_rgb8();
    if rgb.width() as usize != image_size || rgb.height() as usize != image_size {
        rgb = image::imageops::resize(&rgb, image_size as u32, image_size as u32, FilterType::Triangle);
    }
    Ok(rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
}

/// Loads every manifest row (optionally only those of one split), decoding
/// and resizing each image to `image_size × image_size`.
pub fn load_image_folder(
    manifest: &Path,
    image_size: usize,
    num_classes: usize,
    split: Option<&str>,
) -> Result<Dataset> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(manifest)
        .map_err(|e| PldgError::Data(format!("{}: {e}", manifest.display())))?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row?;
        if let (Some(want), Some(have)) = (split, row.split.as_deref()) {
            if want != have {
                continue;
            }
        }
        if row.class >= num_classes {
            return Err(PldgError::Data(format!(
                "{}: unknown class id {} (dataset has {num_classes} classes)",
                row.path, row.class
            )));
        }
        let full = root.join(&row.path);
        if !full.is_file() {
            return Err(PldgError::Data(format!("missing image file {}", full.display())));
        }
        let sample_id = row.sample_id.clone().unwrap_or_else(|| row.path.clone());
        if !seen.insert(sample_id.clone()) {
            return Err(PldgError::Data(format!("duplicate sample_id {sample_id}")));
        }
        samples.push(LabeledImage {
            sample_id,
            pixels: decode(&full, image_size)?,
            class_label: row.class,
            given_domain: row.given_domain,
            artifact_label: row.artifact,
        });
    }
    let name = split.map(str::to_string).unwrap_or_else(|| {
        manifest
            .parent()
            .and_then(|p| p.file_name())
            .map_or("dataset".into(), |n| n.to_string_lossy().into_owned())
    });
    Dataset::new(name, image_size, num_classes, samples)
}

/// Loads one split of a directory written by [`write_dataset_dir`].
pub fn load_split(dir: &Path, split: &str, image_size: usize, num_classes: usize) -> Result<Dataset> {
    let ds = load_image_folder(&dir.join("manifest.csv"), image_size, num_classes, Some(split))?;
    if ds.is_empty() {
        return Err(PldgError::Data(format!("{}: split {split:?} is empty", dir.display())));
    }
    Ok(ds)
}

#[derive(Serialize)]
struct OutRow<'a> {
    sample_id: &'a str,
    path: String,
    class: usize,
    artifact: Option<usize>,
    split: &'a str,
}

/// Writes PNG files plus `manifest.csv` (`sample_id,path,class,artifact,split`).
pub fn write_dataset_dir(dir: &Path, splits: &[(&str, &Dataset)]) -> Result<()> {
    let mut rows = Vec::new();
    for (split, ds) in splits {
        let sub = dir.join("images").join(split);
        fs::create_dir_all(&sub).map_err(|e| PldgError::io(&sub, e))?;
        for s in &ds.samples {
            let rel = format!("images/{split}/{}.png", s.sample_id);
            let full: PathBuf = dir.join(&rel);
            let bytes: Vec<u8> = s.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            let buf: ImageBuffer<Rgb<u8>, _> =
                ImageBuffer::from_raw(ds.image_size as u32, ds.image_size as u32, bytes)
                    .ok_or_else(|| PldgError::Data(format!("sample {} has the wrong size", s.sample_id)))?;
            buf.save(&full).map_err(|e| PldgError::Image {
                path: full.clone(),
                message: e.to_string(),
            })?;
            rows.push(OutRow {
                sample_id: &s.sample_id,
                path: rel,
                class: s.class_label,
                artifact: s.artifact_label,
                split,
            });
        }
    }
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| PldgError::io(&manifest, e))?;
    Ok(())
}
