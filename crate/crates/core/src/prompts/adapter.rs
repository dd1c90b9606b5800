use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbone::params::{slice1, slice1_mut, slice2, slice2_mut};
use crate::backbone::ParamSet;
use crate::error::{PldgError, Result};
use crate::util::{softmax, Rng};

/// Two affine layers with a rectifier between them and a softmax over domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Intermediate values of one adapter evaluation.
#[derive(Debug, Clone)]
pub struct AdapterTrace {
    input: Array1<f64>,
    hidden: Array1<f64>,
    pub weights: Array1<f64>,
}

impl AdapterParams {
    pub fn init(dim: usize, hidden: usize, num_domains: usize, seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(seed);
        let he = Normal::new(0.0, (2.0 / dim as f64).sqrt()).expect("finite std");
        let small = Normal::new(0.0, 0.02).expect("finite std");
        AdapterParams {
            w1: Array2::from_shape_simple_fn((dim, hidden), || he.sample(&mut rng)),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_simple_fn((hidden, num_domains), || small.sample(&mut rng)),
            b2: Array1::zeros(num_domains),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn num_domains(&self) -> usize {
        self.w2.ncols()
    }

    pub fn trace(&self, feature: ArrayView1<f64>) -> Result<AdapterTrace> {
        if feature.len() != self.input_dim() {
            return Err(PldgError::Argument(format!(
                "adapter expects width {}, got {}",
                self.input_dim(),
                feature.len()
            )));
        }
        let hidden = (feature.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0));
        let logits = hidden.dot(&self.w2) + &self.b2;
        let weights = Array1::from(softmax(logits.as_slice().expect("contiguous")));
        Ok(AdapterTrace {
            input: feature.to_owned(),
            hidden,
            weights,
        })
    }

    /// Backprop of `d_weights` (gradient w.r.t. the simplex weights).
    /// The input feature is treated as a constant.
    pub fn backward(&self, trace: &AdapterTrace, d_weights: &Array1<f64>, grads: &mut AdapterParams) {
        let w = &trace.weights;
        let inner = w.dot(d_weights);
        let d_logits = w * &(d_weights - inner);
        grads.w2 += &trace
            .hidden
            .view()
            .insert_axis(Axis(1))
            .dot(&d_logits.view().insert_axis(Axis(0)));
        grads.b2 += &d_logits;
        let mut d_hidden = self.w2.dot(&d_logits);
        for (g, &h) in d_hidden.iter_mut().zip(trace.hidden.iter()) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        grads.w1 += &trace
            .input
            .view()
            .insert_axis(Axis(1))
            .dot(&d_hidden.view().insert_axis(Axis(0)));
        grads.b1 += &d_hidden;
    }
}

impl ParamSet for AdapterParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice2(&self.w1), slice1(&self.b1), slice2(&self.w2), slice1(&self.b2)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice2_mut(&mut self.w1),
            slice1_mut(&mut self.b1),
            slice2_mut(&mut self.w2),
            slice1_mut(&mut self.b2),
        ]
    }
}
