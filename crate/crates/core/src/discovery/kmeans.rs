use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{PldgError, Result};
use crate::util::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub clusters: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest-SSE run is kept.
    pub restarts: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(clusters: usize, seed: u64) -> Self {
        KMeansConfig {
            clusters,
            max_iter: 300,
            tol: 1e-6,
            restarts: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Within-cluster sum of squared distances of the returned solution.
    pub sse: f64,
    pub iterations: usize,
    /// SSE after every Lloyd iteration of the kept restart.
    pub sse_trace: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let dist = sq_dist(point, c);
        if dist < best.1 {
            best = (k, dist);
        }
    }
    best
}

fn plus_plus_seed(x: ArrayView2<f64>, k: usize, rng: &mut Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(pick)));
        }
    }
    centroids
}

fn lloyd(x: ArrayView2<f64>, mut centroids: Array2<f64>, cfg: &KMeansConfig) -> KMeansResult {
    let (n, dim) = x.dim();
    let k = centroids.nrows();
    let mut assignment = vec![0usize; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iter.max(1) {
        iterations += 1;
        let mut dists = vec![0.0; n];
        for (i, r) in x.rows().into_iter().enumerate() {
            let (c, d) = nearest(r, &centroids);
            assignment[i] = c;
            dists[i] = d;
        }
        repair_empty(&mut assignment, &mut dists, k);

        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            let mut s = sums.row_mut(assignment[i]);
            s += &r;
            counts[assignment[i]] += 1;
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let mut row = sums.row_mut(c);
            row /= counts[c] as f64;
            shift = shift.max(sq_dist(row.view(), centroids.row(c)).sqrt());
        }
        centroids = sums;
        let sse: f64 = x
            .rows()
            .into_iter()
            .zip(&assignment)
            .map(|(r, &c)| sq_dist(r, centroids.row(c)))
            .sum();
        trace.push(sse);
        if shift < cfg.tol {
            break;
        }
    }
    KMeansResult {
        assignment,
        sse: *trace.last().unwrap_or(&0.0),
        centroids,
        iterations,
        sse_trace: trace,
    }
}

/// Moves the farthest point of a multi-member cluster into each empty cluster.
fn repair_empty(assignment: &mut [usize], dists: &mut [f64], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..assignment.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("n >= k guarantees a cluster with two members");
        assignment[donor] = empty;
        dists[donor] = 0.0;
    }
}

/// Lloyd's algorithm from k-means++ seeding, keeping the best of several restarts.
pub fn kmeans(features: ArrayView2<f64>, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = features.nrows();
    let k = cfg.clusters;
    if k == 0 {
        return Err(PldgError::Argument("cluster count must be at least 1".into()));
    }
    if k > n {
        return Err(PldgError::Argument(format!(
            "cluster count {k} exceeds the number of samples {n}"
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(PldgError::Data("k-means features contain non-finite values".into()));
    }
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.restarts.max(1) {
        let init = plus_plus_seed(features, k, &mut rng);
        let run = lloyd(features, init, cfg);
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Scales every row to unit Euclidean norm; zero rows are left unchanged.
pub fn l2_normalize_rows(features: &mut Array2<f64>) {
    for mut row in features.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}
