use log::warn;
use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{PldgError, Result};
use crate::util::Rng;

/// One mixed image: `x_mix = λ x_i + (1 − λ) x_j` with `λ ≥ 1/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupSample {
    pub index_i: usize,
    pub index_j: usize,
    pub x_mix: Vec<f32>,
    pub y_i: usize,
    pub y_j: usize,
    pub lambda: f64,
    /// Pseudo-domain of the dominant sample; its prompt routes the mixed image.
    pub domain_i: usize,
    pub domain_j: usize,
}

pub fn mix_pixels(x_i: &[f32], x_j: &[f32], lambda: f64) -> Vec<f32> {
    let l = lambda as f32;
    x_i.iter()
        .zip(x_j)
        .map(|(&a, &b)| if a == b { a } else { l * a + (1.0 - l) * b })
        .collect()
}

impl MixupSample {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        index_i: usize,
        index_j: usize,
        x_i: &[f32],
        x_j: &[f32],
        y_i: usize,
        y_j: usize,
        lambda: f64,
        domain_i: usize,
        domain_j: usize,
    ) -> Self {
        MixupSample {
            index_i,
            index_j,
            x_mix: mix_pixels(x_i, x_j, lambda),
            y_i,
            y_j,
            lambda,
            domain_i,
            domain_j,
        }
    }
}

/// Draws `λ ~ Beta(α, α)` and folds it to `max(λ, 1 − λ)`.
pub fn sample_lambda(alpha: f64, rng: &mut Rng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| PldgError::Config(format!("mixup alpha {alpha}: {e}")))?;
    let l: f64 = beta.sample(rng);
    Ok(l.max(1.0 - l))
}

/// Pairs every image with a partner drawn uniformly (with replacement) from a
/// different pseudo-domain of the same batch.
///
/// When the batch holds a single pseudo-domain the partner is drawn from the
/// whole batch instead, with a warning if more than one domain exists.
pub fn mixup_batch(
    images: &[&[f32]],
    labels: &[usize],
    domains: &[usize],
    num_domains: usize,
    alpha: f64,
    rng: &mut Rng,
) -> Result<Vec<MixupSample>> {
    let b = images.len();
    if labels.len() != b || domains.len() != b {
        return Err(PldgError::Argument("mixup inputs are not aligned".into()));
    }
    let mut warned = false;
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let others: Vec<usize> = (0..b).filter(|&j| domains[j] != domains[i]).collect();
        let j = if others.is_empty() {
            if num_domains > 1 && !warned {
                warn!("mixup batch holds a single pseudo-domain; using in-domain partners");
                warned = true;
            }
            rng.random_range(0..b)
        } else {
            others[rng.random_range(0..others.len())]
        };
        let lambda = sample_lambda(alpha, rng)?;
        out.push(MixupSample::new(
            i, j, images[i], images[j], labels[i], labels[j], lambda, domains[i], domains[j],
        ));
    }
    Ok(out)
}
