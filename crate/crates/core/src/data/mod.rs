//! Labeled image datasets, the image-folder loader, augmentation, and the
//! synthetic trap-set generator.

mod augment;
mod folder;
mod render;
mod trap;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{PldgError, Result};

pub use augment::{augment_image, AugmentConfig};
pub use folder::{load_image_folder, load_split, write_dataset_dir, ManifestRow};
pub use render::render_artifact;
pub use trap::{generate_style_mixture, generate_trap, Artifact, TrapSpec, TrapSplits};

/// One image with its labels. Pixels are interleaved `H × W × 3`, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub sample_id: String,
    pub pixels: Vec<f32>,
    pub class_label: usize,
    pub given_domain: Option<usize>,
    /// Planted artifact, `0` for none and `k` for the k-th artifact (synthetic data only).
    pub artifact_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub image_size: usize,
    pub num_classes: usize,
    pub samples: Vec<LabeledImage>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        image_size: usize,
        num_classes: usize,
        samples: Vec<LabeledImage>,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            image_size,
            num_classes,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.image_size * self.image_size * 3;
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(PldgError::Data(format!(
                    "duplicate sample_id {} in {}",
                    s.sample_id, self.name
                )));
            }
            if s.pixels.len() != want {
                return Err(PldgError::Data(format!(
                    "sample {} has {} pixel values, expected {}",
                    s.sample_id,
                    s.pixels.len(),
                    want
                )));
            }
            if s.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(PldgError::Data(format!(
                    "sample {} has pixels outside [0, 1]",
                    s.sample_id
                )));
            }
            if s.class_label >= self.num_classes {
                return Err(PldgError::Data(format!(
                    "sample {} has class {} but the dataset has {} classes",
                    s.sample_id, s.class_label, self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pixels(&self) -> Vec<&[f32]> {
        self.samples.iter().map(|s| s.pixels.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class_label).collect()
    }

    pub fn sample_ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.sample_id.as_str()).collect()
    }

    /// Artifact labels, if every sample has one.
    pub fn artifact_labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.artifact_label).collect()
    }

    /// Given-domain labels, if every sample has one.
    pub fn given_domains(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.given_domain).collect()
    }

    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        Dataset {
            name: name.into(),
            image_size: self.image_size,
            num_classes: self.num_classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Where domain ids come from when partitioning a dataset.
#[derive(Debug, Clone, Copy)]
pub enum DomainSource<'a> {
    /// Pseudo-domain ids aligned with the dataset order.
    Assigned(&'a [usize]),
    Given,
}

/// Partitions a dataset into per-domain subsets (a disjoint cover).
pub fn split_by_domain(dataset: &Dataset, source: DomainSource<'_>) -> Result<BTreeMap<usize, Dataset>> {
    let ids: Vec<usize> = match source {
        DomainSource::Assigned(a) => {
            if a.len() != dataset.len() {
                return Err(PldgError::Consistency(format!(
                    "{} domain ids for {} samples",
                    a.len(),
                    dataset.len()
                )));
            }
            a.to_vec()
        }
        DomainSource::Given => dataset
            .samples
            .iter()
            .map(|s| {
                s.given_domain.ok_or_else(|| {
                    PldgError::Consistency(format!("sample {} has no domain", s.sample_id))
                })
            })
            .collect::<Result<_>>()?,
    };
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, d) in ids.into_iter().enumerate() {
        groups.entry(d).or_default().push(i);
    }
    Ok(groups
        .into_iter()
        .map(|(d, idx)| (d, dataset.subset(format!("{}/domain{}", dataset.name, d), &idx)))
        .collect())
}
