use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbone::params::{slice2, slice2_mut};
use crate::backbone::ParamSet;
use crate::error::{PldgError, Result};
use crate::util::Rng;

/// Domain prompts `P^m = P* ⊙ (u_m v_mᵀ)` sharing one `s × d` prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptGenerator {
    pub shared: Array2<f64>,
    /// Row `m` is `u_m` (length `s`).
    pub u: Array2<f64>,
    /// Row `m` is `v_m` (length `d`).
    pub v: Array2<f64>,
}

/// Unconstrained per-domain prompts, for runs without the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentPrompts {
    pub prompts: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptBank {
    Generator(PromptGenerator),
    Independent(IndependentPrompts),
}

impl PromptGenerator {
    /// `P*` ~ N(0, 0.02²); `u`, `v` ~ N(1, 0.5²).
    pub fn init(num_domains: usize, prompt_len: usize, dim: usize, seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(seed);
        let shared_dist = Normal::new(0.0, 0.02).expect("finite std");
        let factor_dist = Normal::new(1.0, 0.5).expect("finite std");
        let shared = Array2::from_shape_simple_fn((prompt_len, dim), || shared_dist.sample(&mut rng));
        let u = Array2::from_shape_simple_fn((num_domains, prompt_len), || factor_dist.sample(&mut rng));
        let v = Array2::from_shape_simple_fn((num_domains, dim), || factor_dist.sample(&mut rng));
        PromptGenerator { shared, u, v }
    }

    /// The rank-one factor `u_m v_mᵀ`.
    pub fn factor(&self, m: usize) -> Array2<f64> {
        let u = self.u.row(m).insert_axis(Axis(1));
        let v = self.v.row(m).insert_axis(Axis(0));
        u.dot(&v)
    }
}

impl PromptBank {
    pub fn generator(num_domains: usize, prompt_len: usize, dim: usize, seed: u64) -> Self {
        PromptBank::Generator(PromptGenerator::init(num_domains, prompt_len, dim, seed))
    }

    /// Independent prompts drawn from N(0, 0.02²).
    pub fn independent(num_domains: usize, prompt_len: usize, dim: usize, seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 0.02).expect("finite std");
        let prompts = (0..num_domains)
            .map(|_| Array2::from_shape_simple_fn((prompt_len, dim), || dist.sample(&mut rng)))
            .collect();
        PromptBank::Independent(IndependentPrompts { prompts })
    }

    pub fn num_domains(&self) -> usize {
        match self {
            PromptBank::Generator(g) => g.u.nrows(),
            PromptBank::Independent(p) => p.prompts.len(),
        }
    }

    pub fn prompt_len(&self) -> usize {
        match self {
            PromptBank::Generator(g) => g.shared.nrows(),
            PromptBank::Independent(p) => p.prompts.first().map_or(0, |x| x.nrows()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PromptBank::Generator(g) => g.shared.ncols(),
            PromptBank::Independent(p) => p.prompts.first().map_or(0, |x| x.ncols()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            PromptBank::Generator(g) => {
                g.u.nrows() == g.v.nrows()
                    && g.u.ncols() == g.shared.nrows()
                    && g.v.ncols() == g.shared.ncols()
            }
            PromptBank::Independent(p) => {
                let (s, d) = (self.prompt_len(), self.dim());
                p.prompts.iter().all(|x| x.dim() == (s, d))
            }
        };
        if !ok || self.num_domains() == 0 {
            return Err(PldgError::Config("prompt bank shapes are inconsistent".into()));
        }
        Ok(())
    }

    fn check_domain(&self, m: usize) -> Result<()> {
        if m >= self.num_domains() {
            return Err(PldgError::Argument(format!(
                "domain {m} outside 0..{}",
                self.num_domains()
            )));
        }
        Ok(())
    }

    /// Domain prompt `P^m`, an `s × d` matrix.
    pub fn generate(&self, m: usize) -> Result<Array2<f64>> {
        self.check_domain(m)?;
        Ok(match self {
            PromptBank::Generator(g) => {
                let u = g.u.row(m);
                let v = g.v.row(m);
                let mut p = g.shared.clone();
                for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                    for (j, x) in row.iter_mut().enumerate() {
                        *x *= u[i] * v[j];
                    }
                }
                p
            }
            PromptBank::Independent(p) => p.prompts[m].clone(),
        })
    }

    pub fn generate_all(&self) -> Vec<Array2<f64>> {
        (0..self.num_domains())
            .map(|m| self.generate(m).expect("in range"))
            .collect()
    }

    /// Accumulates into `grads` the gradient of a loss whose gradient with
    /// respect to `P^m` is `d_prompt`.
    pub fn backward(&self, m: usize, d_prompt: &Array2<f64>, grads: &mut PromptBank) {
        match (self, grads) {
            (PromptBank::Generator(g), PromptBank::Generator(gg)) => {
                let u = g.u.row(m);
                let v = g.v.row(m);
                let (s, d) = g.shared.dim();
                let mut du = Array1::<f64>::zeros(s);
                let mut dv = Array1::<f64>::zeros(d);
                for i in 0..s {
                    for j in 0..d {
                        let dp = d_prompt[[i, j]];
                        let sh = g.shared[[i, j]];
                        gg.shared[[i, j]] += dp * u[i] * v[j];
                        du[i] += dp * sh * v[j];
                        dv[j] += dp * sh * u[i];
                    }
                }
                let mut ur = gg.u.row_mut(m);
                ur += &du;
                let mut vr = gg.v.row_mut(m);
                vr += &dv;
            }
            (PromptBank::Independent(_), PromptBank::Independent(gg)) => {
                gg.prompts[m] += d_prompt;
            }
            _ => panic!("gradient bank kind does not match the parameter bank"),
        }
    }
}

impl ParamSet for PromptBank {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            PromptBank::Generator(g) => vec![slice2(&g.shared), slice2(&g.u), slice2(&g.v)],
            PromptBank::Independent(p) => p.prompts.iter().map(slice2).collect(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            PromptBank::Generator(g) => vec![
                slice2_mut(&mut g.shared),
                slice2_mut(&mut g.u),
                slice2_mut(&mut g.v),
            ],
            PromptBank::Independent(p) => p.prompts.iter_mut().map(slice2_mut).collect(),
        }
    }
}
