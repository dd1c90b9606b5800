use std::collections::HashMap;

use crate::error::{PldgError, Result};

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I(A;B) / sqrt(H(A) H(B))` with natural logs.
///
/// Two constant labelings score 1; a constant labeling against a
/// non-constant one scores 0.
pub fn nmi(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(PldgError::Argument(format!(
            "labelings have different lengths ({} vs {})",
            labels_a.len(),
            labels_b.len()
        )));
    }
    if labels_a.is_empty() {
        return Err(PldgError::Argument("labelings are empty".into()));
    }
    let n = labels_a.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        *joint.entry((a, b)).or_default() += 1;
        *ca.entry(a).or_default() += 1;
        *cb.entry(b).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    match (ca.len() == 1, cb.len() == 1) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut mi = 0.0;
    // sorted iteration keeps the floating-point sum order reproducible
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    for ((a, b), c) in cells {
        let pab = c as f64 / n;
        let pa = ca[&a] as f64 / n;
        let pb = cb[&b] as f64 / n;
        mi += pab * (pab / (pa * pb)).ln();
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}
