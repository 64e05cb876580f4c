//! Central finite-difference checks of analytical gradients (64-bit).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.max_rel_error.is_finite()
    }
}

/// Compares back-propagated gradients of `sum(f(inputs) * r)` (fixed random
/// projection `r`) with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Denominator floor that keeps near-zero gradients from dominating.
    pub floor: f64,
    /// Checks at most this many randomly chosen elements per input.
    pub max_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            floor: 1e-4,
            max_per_input: None,
            seed: 0x5eed,
        }
    }
}

impl GradCheck {
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<GradReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        // analytic pass also fixes the projection's shape
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let out_shape = g.value(out).shape();
        let proj = Tensor::from_fn(out_shape, |_, _, _, _| rng.random_range(-1.0..1.0));
        let loss = project(&mut g, out, &proj)?;
        let grads = g.backward(loss)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();

        let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = perturbed.iter().map(|t| g.input(t.clone())).collect();
            let out = f(&mut g, &vars)?;
            let loss = project(&mut g, out, &proj)?;
            Ok(g.value(loss).data()[0])
        };

        let mut report = GradReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
        };
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (i, input) in inputs.iter().enumerate() {
            let n = input.numel();
            let indices: Vec<usize> = match self.max_per_input {
                Some(m) if m < n => (0..m).map(|_| rng.random_range(0..n)).collect(),
                _ => (0..n).collect(),
            };
            for j in indices {
                let orig = input.data()[j];
                work[i].data_mut()[j] = orig + self.step;
                let up = eval(&work)?;
                work[i].data_mut()[j] = orig - self.step;
                let down = eval(&work)?;
                work[i].data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * self.step);
                let a = analytic[i][j];
                let denom = a.abs().max(numeric.abs()).max(self.floor);
                let err = (a - numeric).abs() / denom;
                report.checked += 1;
                if err.is_nan() || err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some((i, j));
                }
            }
        }
        Ok(report)
    }
}

fn project(g: &mut Graph<f64>, out: Var, proj: &Tensor<f64>) -> Result<Var> {
    let p = g.input(proj.clone());
    let prod = g.mul(out, p)?;
    Ok(g.sum(prod))
}

/// Deterministic uniform `[-1, 1)` tensor for checks and tests.
pub fn random_tensor(shape: super::Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}
