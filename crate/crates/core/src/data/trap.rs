//! Synthetic trap sets: a learnable class pattern plus an artifact whose
//! co-occurrence with the class is planted at strength `rho` in the training
//! distribution and reversed in the out-of-distribution test split.
//!
//! Joint distribution, per class `c` with sign `s_c = +1` for odd classes and
//! `-1` for even classes:
//!
//! ```text
//! P(artifact | c) = (1 + rho * s_c) / 2        train, val, test_id
//! P(artifact | c) = (1 - rho * s_c) / 2        test_ood
//! ```
//!
//! Cell counts are the rounded expectations of this table (classes are
//! balanced), so `rho = 0` gives exact independence and `rho = 1` gives
//! deterministic co-occurrence. Artifact-bearing images draw their artifact
//! uniformly from the spec's list.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::render::{apply_artifact, render_lesion};
use super::{Dataset, LabeledImage};
use crate::error::{PldgError, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    CornerPatch,
    StripeRuler,
    ColorTint,
    CurveHair,
}

impl Artifact {
    pub const ALL: [Artifact; 4] = [
        Artifact::CornerPatch,
        Artifact::StripeRuler,
        Artifact::ColorTint,
        Artifact::CurveHair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Artifact::CornerPatch => "corner_patch",
            Artifact::StripeRuler => "stripe_ruler",
            Artifact::ColorTint => "color_tint",
            Artifact::CurveHair => "curve_hair",
        }
    }
}

impl fmt::Display for Artifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Artifact {
    type Err = PldgError;

    fn from_str(s: &str) -> Result<Self> {
        Artifact::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| PldgError::Config(format!("unknown artifact {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSpec {
    pub rho: f64,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    pub artifacts: Vec<Artifact>,
    pub image_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test_id: usize,
    pub n_test_ood: usize,
    pub seed: u64,
}

fn default_classes() -> usize {
    2
}

impl Default for TrapSpec {
    fn default() -> Self {
        TrapSpec {
            rho: 1.0,
            num_classes: 2,
            artifacts: vec![Artifact::ColorTint],
            image_size: 32,
            n_train: 2000,
            n_val: 400,
            n_test_id: 400,
            n_test_ood: 400,
            seed: 0,
        }
    }
}

impl TrapSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PldgError::Config(m));
        if !(0.0..=1.0).contains(&self.rho) || !self.rho.is_finite() {
            return fail(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.artifacts.is_empty() {
            return fail("at least one artifact is required".into());
        }
        if self.image_size < 8 {
            return fail(format!("image_size must be at least 8, got {}", self.image_size));
        }
        for (name, n) in [
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("n_test_id", self.n_test_id),
            ("n_test_ood", self.n_test_ood),
        ] {
            if n == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Probability that a class-`c` image carries an artifact.
    pub fn artifact_probability(&self, class: usize, reversed: bool) -> f64 {
        let sign = if class % 2 == 1 { 1.0 } else { -1.0 };
        let sign = if reversed { -sign } else { sign };
        (1.0 + self.rho * sign) / 2.0
    }

    /// Target `(class, with_artifact) -> count` table for one split.
    pub fn cell_counts(&self, n: usize, reversed: bool) -> Result<Vec<[usize; 2]>> {
        let c = self.num_classes;
        let mut out = Vec::with_capacity(c);
        for class in 0..c {
            let n_class = n / c + usize::from(class < n % c);
            let p = self.artifact_probability(class, reversed);
            let with = (n_class as f64 * p).round() as usize;
            let without = n_class - with;
            if (p > 0.0 && with == 0) || (p < 1.0 && without == 0) {
                return Err(PldgError::Config(format!(
                    "{n} samples at rho {} leave the class {class} cell {} empty",
                    self.rho,
                    if with == 0 { "with artifact" } else { "without artifact" }
                )));
            }
            out.push([without, with]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrapSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test_id: Dataset,
    pub test_ood: Dataset,
}

impl TrapSplits {
    pub fn named(&self) -> [(&'static str, &Dataset); 4] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test_id", &self.test_id),
            ("test_ood", &self.test_ood),
        ]
    }
}

fn build_split(
    spec: &TrapSpec,
    split: &str,
    split_tag: u64,
    cells: &[[usize; 2]],
) -> Result<Dataset> {
    // (class, artifact index or none)
    let mut plan: Vec<(usize, Option<usize>)> = Vec::new();
    let mut rng = rng_for(spec.seed, &[split_tag, 0]);
    for (class, &[without, with]) in cells.iter().enumerate() {
        plan.extend(std::iter::repeat_n((class, None), without));
        for _ in 0..with {
            plan.push((class, Some(rng.random_range(0..spec.artifacts.len()))));
        }
    }
    plan.shuffle(&mut rng);
    let samples = plan
        .into_iter()
        .enumerate()
        .map(|(i, (class, art))| {
            let mut r = rng_for(spec.seed, &[split_tag, 1, i as u64]);
            let mut canvas = render_lesion(spec.image_size, class, &mut r);
            if let Some(a) = art {
                apply_artifact(&mut canvas, spec.artifacts[a], &mut r);
            }
            LabeledImage {
                sample_id: format!("{split}-{i:05}"),
                pixels: canvas.finish(),
                class_label: class,
                given_domain: None,
                artifact_label: Some(art.map_or(0, |a| a + 1)),
            }
        })
        .collect();
    Dataset::new(split, spec.image_size, spec.num_classes, samples)
}

/// Generates the four trap splits. Pure function of the spec.
pub fn generate_trap(spec: &TrapSpec) -> Result<TrapSplits> {
    spec.validate()?;
    let plan = [
        ("train", spec.n_train, false),
        ("val", spec.n_val, false),
        ("test_id", spec.n_test_id, false),
        ("test_ood", spec.n_test_ood, true),
    ];
    let mut sets = Vec::with_capacity(4);
    for (tag, (name, n, reversed)) in plan.into_iter().enumerate() {
        let cells = spec.cell_counts(n, reversed)?;
        sets.push(build_split(spec, name, tag as u64 + 1, &cells)?);
    }
    let mut it = sets.into_iter();
    Ok(TrapSplits {
        train: it.next().unwrap(),
        val: it.next().unwrap(),
        test_id: it.next().unwrap(),
        test_ood: it.next().unwrap(),
    })
}

/// A class-balanced dataset whose images carry one of several styles,
/// independent of the class. Style `0` is "no artifact", style `k` is
/// `artifacts[k-1]`; `styles` lists which styles appear, in equal shares.
pub fn generate_style_mixture(
    name: &str,
    artifacts: &[Artifact],
    styles: &[usize],
    n: usize,
    image_size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    if styles.is_empty() || styles.iter().any(|&s| s > artifacts.len()) {
        return Err(PldgError::Config(format!(
            "styles {styles:?} must be non-empty and index into {} artifacts",
            artifacts.len()
        )));
    }
    let cells = styles.len() * num_classes;
    if n < cells {
        return Err(PldgError::Config(format!("{n} samples cannot fill {cells} style/class cells")));
    }
    let tag = name.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut plan = Vec::with_capacity(n);
    for i in 0..n {
        let cell = i % cells;
        plan.push((cell % num_classes, styles[cell / num_classes]));
    }
    let mut rng = rng_for(seed, &[tag, 0]);
    plan.shuffle(&mut rng);
    let samples = plan
        .into_iter()
        .enumerate()
        .map(|(i, (class, style))| {
            let mut r = rng_for(seed, &[tag, 1, i as u64]);
            let mut canvas = render_lesion(image_size, class, &mut r);
            if style > 0 {
                apply_artifact(&mut canvas, artifacts[style - 1], &mut r);
            }
            LabeledImage {
                sample_id: format!("{name}-{i:05}"),
                pixels: canvas.finish(),
                class_label: class,
                given_domain: Some(style),
                artifact_label: Some(style),
            }
        })
        .collect();
    Dataset::new(name, image_size, num_classes, samples)
}
