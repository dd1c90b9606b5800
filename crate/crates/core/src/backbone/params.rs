use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EncoderConfig;
use crate::util::Rng;

/// A bundle of parameter tensors that can be walked in a fixed order.
///
/// Gradients use the same type as the parameters they belong to, so an
/// optimizer can zip `tensors_mut()` of the parameters with `tensors()` of
/// the gradients.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    /// Fused query/key/value projection, `d × 3d`.
    pub w_qkv: Array2<f64>,
    pub b_qkv: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_fc1: Array2<f64>,
    pub b_fc1: Array1<f64>,
    pub w_fc2: Array2<f64>,
    pub b_fc2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// Patch projection, `patch_dim × d`.
    pub patch_w: Array2<f64>,
    pub patch_b: Array1<f64>,
    /// Learned positional encodings for the patch tokens only.
    pub pos: Array2<f64>,
    pub cls: Array1<f64>,
    pub blocks: Vec<BlockParams>,
    pub head_ln_gain: Array1<f64>,
    pub head_ln_bias: Array1<f64>,
    /// Classifier, `d × C`.
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

fn gaussian2(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl EncoderParams {
    pub fn init(config: &EncoderConfig, rng: &mut Rng) -> Self {
        let d = config.embed_dim;
        let hidden = config.mlp_hidden();
        let blocks = (0..config.depth)
            .map(|_| BlockParams {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                w_qkv: xavier(d, 3 * d, rng),
                b_qkv: Array1::zeros(3 * d),
                w_out: xavier(d, d, rng),
                b_out: Array1::zeros(d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                w_fc1: xavier(d, hidden, rng),
                b_fc1: Array1::zeros(hidden),
                w_fc2: xavier(hidden, d, rng),
                b_fc2: Array1::zeros(d),
            })
            .collect();
        let cls = gaussian2(1, d, 0.02, rng).row(0).to_owned();
        EncoderParams {
            patch_w: xavier(config.patch_dim(), d, rng),
            patch_b: Array1::zeros(d),
            pos: gaussian2(config.num_patches(), d, 0.02, rng),
            cls,
            blocks,
            head_ln_gain: Array1::ones(d),
            head_ln_bias: Array1::zeros(d),
            head_w: xavier(d, config.num_classes, rng),
            head_b: Array1::zeros(config.num_classes),
        }
    }

    /// Number of leading tensors that belong to the feature extractor; the
    /// remaining four are the classification head.
    pub fn num_backbone_tensors(&self) -> usize {
        4 + 12 * self.blocks.len()
    }
}

impl ParamSet for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            slice2(&self.patch_w),
            slice1(&self.patch_b),
            slice2(&self.pos),
            slice1(&self.cls),
        ];
        for b in &self.blocks {
            out.extend([
                slice1(&b.ln1_gain),
                slice1(&b.ln1_bias),
                slice2(&b.w_qkv),
                slice1(&b.b_qkv),
                slice2(&b.w_out),
                slice1(&b.b_out),
                slice1(&b.ln2_gain),
                slice1(&b.ln2_bias),
                slice2(&b.w_fc1),
                slice1(&b.b_fc1),
                slice2(&b.w_fc2),
                slice1(&b.b_fc2),
            ]);
        }
        out.extend([
            slice1(&self.head_ln_gain),
            slice1(&self.head_ln_bias),
            slice2(&self.head_w),
            slice1(&self.head_b),
        ]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            slice2_mut(&mut self.patch_w),
            slice1_mut(&mut self.patch_b),
            slice2_mut(&mut self.pos),
            slice1_mut(&mut self.cls),
        ];
        for b in &mut self.blocks {
            out.extend([
                slice1_mut(&mut b.ln1_gain),
                slice1_mut(&mut b.ln1_bias),
                slice2_mut(&mut b.w_qkv),
                slice1_mut(&mut b.b_qkv),
                slice2_mut(&mut b.w_out),
                slice1_mut(&mut b.b_out),
                slice1_mut(&mut b.ln2_gain),
                slice1_mut(&mut b.ln2_bias),
                slice2_mut(&mut b.w_fc1),
                slice1_mut(&mut b.b_fc1),
                slice2_mut(&mut b.w_fc2),
                slice1_mut(&mut b.b_fc2),
            ]);
        }
        out.extend([
            slice1_mut(&mut self.head_ln_gain),
            slice1_mut(&mut self.head_ln_bias),
            slice2_mut(&mut self.head_w),
            slice1_mut(&mut self.head_b),
        ]);
        out
    }
}
