//! Unstructured baseline: a dense network from `(q, q̇, aux)` to acceleration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::weights::Activation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    pub root_dim: usize,
    pub aux_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpPolicy {
    pub fn new(root_dim: usize, aux_dim: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        if root_dim == 0 {
            return Err(Error::Config("policy needs a positive configuration dimension".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be at least 1".into()));
        }
        Ok(MlpPolicy {
            root_dim,
            aux_dim,
            hidden: hidden.to_vec(),
            activation,
        })
    }

    /// Two equal hidden layers sized so the parameter count is as close as
    /// possible to `target`.
    pub fn matching(root_dim: usize, aux_dim: usize, target: usize, activation: Activation) -> Result<Self> {
        let count = |h: usize| MlpPolicy::new(root_dim, aux_dim, &[h, h], activation).map(|p| p.param_count());
        let mut best = (1, usize::MAX);
        for h in 1..=512 {
            let c = count(h)?;
            let diff = c.abs_diff(target);
            if diff < best.1 {
                best = (h, diff);
            }
            if c > target {
                break;
            }
        }
        MlpPolicy::new(root_dim, aux_dim, &[best.0, best.0], activation)
    }

    pub fn in_dim(&self) -> usize {
        2 * self.root_dim + self.aux_dim
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.in_dim()];
        s.extend(&self.hidden);
        s.push(self.root_dim);
        s
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform ±1/√fan_in hidden layers and a zero output layer, so the
    /// untrained policy outputs zero everywhere.
    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let sizes = self.layer_sizes();
        let last = sizes.len() - 2;
        let mut params = Vec::with_capacity(self.param_count());
        for (l, w) in sizes.windows(2).enumerate() {
            let n = w[0] * w[1] + w[1];
            if l == last {
                params.extend(std::iter::repeat_n(0.0, n));
            } else {
                let bound = 1.0 / (w[0] as f64).sqrt();
                params.extend((0..n).map(|_| rng.random_range(-bound..=bound)));
            }
        }
        params
    }

    pub fn input(&self, q: &[f64], qd: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.root_dim || qd.len() != self.root_dim || aux.len() != self.aux_dim {
            return Err(Error::Dimension(format!(
                "policy expects (q {}, qd {}, aux {}), got ({}, {}, {})",
                self.root_dim,
                self.root_dim,
                self.aux_dim,
                q.len(),
                qd.len(),
                aux.len()
            )));
        }
        Ok(q.iter().chain(qd).chain(aux).copied().collect())
    }

    pub fn forward<S: Real>(&self, input: &[f64], params: &[S]) -> Result<Vec<S>> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "policy needs {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let sizes = self.layer_sizes();
        let mut act: Vec<S> = input.iter().map(|&v| S::constant(v)).collect();
        let mut offset = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let hidden = l + 2 < sizes.len();
            act = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let z = row
                        .iter()
                        .zip(&act)
                        .fold(bias[o], |acc, (&wi, &ai)| acc + wi * ai);
                    if hidden {
                        match self.activation {
                            Activation::Tanh => z.tanh(),
                            Activation::Elu if z.value() > 0.0 => z,
                            Activation::Elu => z.exp() - 1.0,
                        }
                    } else {
                        z
                    }
                })
                .collect();
        }
        Ok(act)
    }
}
