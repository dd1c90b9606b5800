//! The demo operations as plain Rust, so they can be tested off the browser.

use ndarray::{Array1, Array2};
use pldg::data::{generate_trap, Artifact, TrapSpec};
use pldg::discovery::{kmeans, nmi, KMeansConfig};
use pldg::prompts::{combine_prompts, PromptBank, PromptWeights};
use pldg::util::rng_for;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

/// A grid of training images with their labels, as RGBA bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gallery {
    pub width: usize,
    pub height: usize,
    #[serde(skip)]
    pub rgba: Vec<u8>,
    /// `(class, artifact)` per cell, row-major.
    pub cells: Vec<(usize, usize)>,
}

pub fn trap_gallery(rho: f64, artifact: &str, seed: u64, cols: usize, rows: usize, scale: usize) -> Result<Gallery, String> {
    let artifact: Artifact = artifact.parse().map_err(|e: pldg::PldgError| e.to_string())?;
    if cols == 0 || rows == 0 || scale == 0 || cols * rows > 256 {
        return Err("grid must have between 1 and 256 cells and a positive scale".into());
    }
    let size = 16;
    let n = cols * rows;
    let splits = generate_trap(&TrapSpec {
        rho,
        artifacts: vec![artifact],
        image_size: size,
        n_train: n.max(8),
        n_val: 8,
        n_test_id: 8,
        n_test_ood: 8,
        seed,
        ..TrapSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let cell = size * scale + 2;
    let (width, height) = (cols * cell, rows * cell);
    let mut rgba = vec![255u8; width * height * 4];
    let mut cells = Vec::with_capacity(n);
    for (k, s) in splits.train.samples.iter().take(n).enumerate() {
        let (cx, cy) = ((k % cols) * cell + 1, (k / cols) * cell + 1);
        for y in 0..size * scale {
            for x in 0..size * scale {
                let src = ((y / scale) * size + x / scale) * 3;
                let dst = ((cy + y) * width + cx + x) * 4;
                for c in 0..3 {
                    rgba[dst + c] = (s.pixels[src + c].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        cells.push((s.class_label, s.artifact_label.unwrap_or(0)));
    }
    Ok(Gallery {
        width,
        height,
        rgba,
        cells,
    })
}

/// `Σ_m w_m P^m` for a seeded rank-one prompt generator, row-major `s × d`.
/// The weights are normalized to sum to one.
pub fn prompt_heatmap(prompt_len: usize, dim: usize, seed: u64, weights: &[f64]) -> Result<Vec<f64>, String> {
    if weights.is_empty() || prompt_len == 0 || dim == 0 {
        return Err("need at least one weight and a non-empty prompt".into());
    }
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) || weights.iter().any(|&w| !(w >= 0.0)) {
        return Err("weights must be non-negative with a positive sum".into());
    }
    let w = PromptWeights::new(Array1::from_iter(weights.iter().map(|x| x / sum))).map_err(|e| e.to_string())?;
    let bank = PromptBank::generator(weights.len(), prompt_len, dim, seed);
    let p: Array2<f64> = combine_prompts(&bank.generate_all(), w.values());
    Ok(p.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterDemo {
    /// `(x, y, true_group, cluster)` per point.
    pub points: Vec<(f64, f64, usize, usize)>,
    pub nmi: f64,
    pub sse: f64,
    pub iterations: usize,
}

/// Gaussian blobs on a circle, clustered with k-means and scored with NMI
/// against the generating blob.
pub fn cluster_blobs(groups: usize, per_group: usize, spread: f64, clusters: usize, seed: u64) -> Result<ClusterDemo, String> {
    if groups == 0 || per_group == 0 || clusters == 0 || groups * per_group > 5000 {
        return Err("need 1..=5000 points and at least one cluster".into());
    }
    let noise = Normal::new(0.0, spread.max(0.0)).map_err(|e| e.to_string())?;
    let mut rng = rng_for(seed, &[7]);
    let n = groups * per_group;
    let mut x = Array2::zeros((n, 2));
    let mut truth = Vec::with_capacity(n);
    for g in 0..groups {
        let a = std::f64::consts::TAU * g as f64 / groups as f64;
        for k in 0..per_group {
            let i = g * per_group + k;
            x[[i, 0]] = a.cos() + noise.sample(&mut rng);
            x[[i, 1]] = a.sin() + noise.sample(&mut rng);
            truth.push(g);
        }
    }
    let r = kmeans(x.view(), &KMeansConfig::new(clusters, seed)).map_err(|e| e.to_string())?;
    Ok(ClusterDemo {
        points: (0..n).map(|i| (x[[i, 0]], x[[i, 1]], truth[i], r.assignment[i])).collect(),
        nmi: nmi(&truth, &r.assignment).map_err(|e| e.to_string())?,
        sse: r.sse,
        iterations: r.iterations,
    })
}
