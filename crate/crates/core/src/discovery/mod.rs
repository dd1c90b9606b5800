//! Pseudo-domain discovery: shallow class-token features are clustered once
//! and the cluster ids stand in for domain labels for the rest of training.

mod kmeans;
mod nmi;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::backbone::Encoder;
use crate::data::Dataset;
use crate::error::{PldgError, Result};

pub use kmeans::{kmeans, l2_normalize_rows, KMeansConfig, KMeansResult};
pub use nmi::nmi;

/// Layer-`L` class tokens of every training image.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleFeatureMatrix {
    pub features: Array2<f64>,
    pub sample_ids: Vec<String>,
    pub layer: usize,
    pub epoch: usize,
}

/// Eval-mode class tokens after block `layer` for every sample, in dataset order.
pub fn collect_style_features(
    encoder: &Encoder,
    dataset: &Dataset,
    layer: usize,
    batch_size: usize,
    epoch: usize,
) -> Result<StyleFeatureMatrix> {
    if dataset.is_empty() {
        return Err(PldgError::Argument(format!("dataset {} is empty", dataset.name)));
    }
    let pixels = dataset.pixels();
    let mut features = Array2::zeros((dataset.len(), encoder.embed_dim()));
    let mut row = 0;
    for chunk in pixels.chunks(batch_size.max(1)) {
        let f = encoder.extract_cls(chunk, layer)?;
        features
            .slice_mut(ndarray::s![row..row + chunk.len(), ..])
            .assign(&f);
        row += chunk.len();
    }
    Ok(StyleFeatureMatrix {
        features,
        sample_ids: dataset.samples.iter().map(|s| s.sample_id.clone()).collect(),
        layer,
        epoch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub num_domains: usize,
    pub layer: usize,
    pub normalize: bool,
    /// Cluster each class separately; domain `m` is the m-th cluster of every class.
    pub per_class: bool,
    pub kmeans: KMeansConfig,
}

impl ClusteringConfig {
    pub fn new(num_domains: usize, seed: u64) -> Self {
        ClusteringConfig {
            num_domains,
            layer: 1,
            normalize: true,
            per_class: false,
            kmeans: KMeansConfig::new(num_domains, seed),
        }
    }
}

/// Runs k-means on the style features under the given configuration.
pub fn cluster_features(
    style: &StyleFeatureMatrix,
    classes: &[usize],
    cfg: &ClusteringConfig,
) -> Result<KMeansResult> {
    let mut x = style.features.clone();
    if cfg.normalize {
        l2_normalize_rows(&mut x);
    }
    let km = KMeansConfig {
        clusters: cfg.num_domains,
        ..cfg.kmeans.clone()
    };
    if !cfg.per_class {
        return kmeans(x.view(), &km);
    }
    if classes.len() != x.nrows() {
        return Err(PldgError::Consistency("class labels not aligned with features".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in classes.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut assignment = vec![0; x.nrows()];
    let mut centroid_sum = Array2::zeros((cfg.num_domains, x.ncols()));
    let mut sse = 0.0;
    let mut iterations = 0;
    for idx in by_class.values() {
        let sub = x.select(Axis(0), idx);
        let r = kmeans(sub.view(), &km)?;
        for (k, &i) in idx.iter().enumerate() {
            assignment[i] = r.assignment[k];
        }
        centroid_sum += &r.centroids;
        sse += r.sse;
        iterations = iterations.max(r.iterations);
    }
    centroid_sum /= by_class.len() as f64;
    Ok(KMeansResult {
        assignment,
        centroids: centroid_sum,
        sse,
        iterations,
        sse_trace: vec![sse],
    })
}

/// Frozen map from training sample to pseudo-domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoDomainAssignment {
    /// `(sample_id, domain)` in training-set order.
    pub entries: Vec<(String, usize)>,
    pub centroids: Array2<f64>,
    pub num_domains: usize,
    pub layer: usize,
    pub epoch: usize,
}

impl PseudoDomainAssignment {
    pub fn domains(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn domain_of(&self) -> HashMap<&str, usize> {
        self.entries.iter().map(|(id, d)| (id.as_str(), *d)).collect()
    }

    pub fn domain_sizes(&self) -> BTreeMap<usize, usize> {
        let mut sizes = BTreeMap::new();
        for (_, d) in &self.entries {
            *sizes.entry(*d).or_insert(0) += 1;
        }
        sizes
    }

    /// Domain ids aligned with `dataset`'s sample order.
    pub fn aligned(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        let map = self.domain_of();
        dataset
            .samples
            .iter()
            .map(|s| {
                map.get(s.sample_id.as_str()).copied().ok_or_else(|| {
                    PldgError::Consistency(format!("sample {} has no pseudo-domain", s.sample_id))
                })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample_id", "pseudo_domain"])?;
        for (id, d) in &self.entries {
            out.write_record([id.as_str(), &d.to_string()])?;
        }
        out.flush().map_err(|e| PldgError::io("assignment csv", e))?;
        Ok(())
    }

    /// Reads `sample_id,pseudo_domain` rows; centroids are not stored in the CSV.
    pub fn read_csv<R: Read>(r: R, layer: usize, epoch: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let mut entries = Vec::new();
        for rec in reader.deserialize::<(String, usize)>() {
            entries.push(rec?);
        }
        let num_domains = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        Ok(PseudoDomainAssignment {
            entries,
            centroids: Array2::zeros((0, 0)),
            num_domains,
            layer,
            epoch,
        })
    }
}

/// Holds the pseudo-domain assignment and refuses to mint a second one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSlot(Option<PseudoDomainAssignment>);

impl AssignmentSlot {
    pub fn get(&self) -> Option<&PseudoDomainAssignment> {
        self.0.as_ref()
    }

    pub fn is_frozen(&self) -> bool {
        self.0.is_some()
    }

    /// Freezes the assignment given by a clustering of `style` features of `dataset`.
    pub fn assign_pseudo_domains(
        &mut self,
        dataset: &Dataset,
        style: &StyleFeatureMatrix,
        result: &KMeansResult,
    ) -> Result<&PseudoDomainAssignment> {
        if self.0.is_some() {
            return Err(PldgError::Consistency("assignment already frozen".into()));
        }
        if style.sample_ids.len() != dataset.len()
            || result.assignment.len() != dataset.len()
            || style
                .sample_ids
                .iter()
                .zip(&dataset.samples)
                .any(|(a, s)| *a != s.sample_id)
        {
            return Err(PldgError::Consistency(
                "clustered features are not aligned with the training set".into(),
            ));
        }
        let num_domains = result.centroids.nrows();
        let entries = style
            .sample_ids
            .iter()
            .cloned()
            .zip(result.assignment.iter().copied())
            .collect();
        self.0 = Some(PseudoDomainAssignment {
            entries,
            centroids: result.centroids.clone(),
            num_domains,
            layer: style.layer,
            epoch: style.epoch,
        });
        Ok(self.0.as_ref().unwrap())
    }

    /// Restores a previously frozen assignment (e.g. from a checkpoint).
    pub fn restore(&mut self, assignment: PseudoDomainAssignment) -> Result<()> {
        if self.0.is_some() {
            return Err(PldgError::Consistency("assignment already frozen".into()));
        }
        let mut seen = HashSet::new();
        for (id, d) in &assignment.entries {
            if *d >= assignment.num_domains || !seen.insert(id) {
                return Err(PldgError::Consistency(format!("invalid assignment entry {id}")));
            }
        }
        self.0 = Some(assignment);
        Ok(())
    }
}

/// One row of the clustering diagnostics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub epoch: usize,
    pub layer: usize,
    pub nmi_class: f64,
    pub nmi_given_domain: Option<f64>,
    pub nmi_prev: Option<f64>,
}

/// Re-clusters chosen layers every epoch and tracks how the clustering
/// relates to the class labels, reference domains, and its own previous epoch.
///
/// Reference domains are the given-domain labels when present, otherwise the
/// planted artifact labels of synthetic data.
#[derive(Debug, Clone)]
pub struct DiagnosticsTracker {
    pub layers: Vec<usize>,
    pub clustering: ClusteringConfig,
    previous: HashMap<usize, Vec<usize>>,
    pub rows: Vec<DiagnosticRow>,
}

impl DiagnosticsTracker {
    pub fn new(layers: Vec<usize>, clustering: ClusteringConfig) -> Self {
        DiagnosticsTracker {
            layers,
            clustering,
            previous: HashMap::new(),
            rows: Vec::new(),
        }
    }

    pub fn record(&mut self, epoch: usize, encoder: &Encoder, dataset: &Dataset) -> Result<&[DiagnosticRow]> {
        let classes = dataset.labels();
        let reference = dataset.given_domains().or_else(|| dataset.artifact_labels());
        let start = self.rows.len();
        for &layer in &self.layers.clone() {
            let style = collect_style_features(encoder, dataset, layer, 64, epoch)?;
            let cfg = ClusteringConfig {
                layer,
                ..self.clustering.clone()
            };
            let assignment = cluster_features(&style, &classes, &cfg)?.assignment;
            let nmi_prev = match self.previous.get(&layer) {
                Some(prev) => Some(nmi(prev, &assignment)?),
                None => None,
            };
            let row = DiagnosticRow {
                epoch,
                layer,
                nmi_class: nmi(&assignment, &classes)?,
                nmi_given_domain: reference.as_ref().map(|r| nmi(&assignment, r)).transpose()?,
                nmi_prev,
            };
            self.previous.insert(layer, assignment);
            self.rows.push(row);
        }
        Ok(&self.rows[start..])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_diagnostics_csv(&self.rows, w)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_diagnostics_csv<W: Write>(rows: &[DiagnosticRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "layer", "nmi_class", "nmi_given_domain", "nmi_prev"])?;
    for r in rows {
        out.write_record([
            r.epoch.to_string(),
            r.layer.to_string(),
            format!("{}", r.nmi_class),
            opt(r.nmi_given_domain),
            opt(r.nmi_prev),
        ])?;
    }
    out.flush().map_err(|e| PldgError::io("diagnostics csv", e))?;
    Ok(())
}

/// Writes `sample_id,f_0..f_{d-1},pseudo_domain,class` for external projection tools.
pub fn export_features_csv<W: Write>(
    style: &StyleFeatureMatrix,
    domains: &[usize],
    classes: &[usize],
    w: W,
) -> Result<()> {
    let n = style.features.nrows();
    if domains.len() != n || classes.len() != n {
        return Err(PldgError::Consistency("feature export inputs are not aligned".into()));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..style.features.ncols()).map(|j| format!("f_{j}")));
    header.push("pseudo_domain".into());
    header.push("class".into());
    out.write_record(&header)?;
    for (i, row) in style.features.rows().into_iter().enumerate() {
        let mut rec = vec![style.sample_ids[i].clone()];
        rec.extend(row.iter().map(|v| format!("{v}")));
        rec.push(domains[i].to_string());
        rec.push(classes[i].to_string());
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| PldgError::io("feature csv", e))?;
    Ok(())
}
