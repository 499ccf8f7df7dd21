//! First-order optimizers with serializable state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Rmsprop,
    Adam,
}

pub const RMSPROP_DECAY: f64 = 0.9;
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const OPTIM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Completed steps.
    pub t: u64,
    /// First moment (Adam only).
    pub m: Vec<f64>,
    /// Second moment.
    pub v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, n: usize) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            t: 0,
            m: if kind == OptimizerKind::Adam { vec![0.0; n] } else { Vec::new() },
            v: vec![0.0; n],
        })
    }

    /// Applies one update in place. On error the parameters are left unchanged.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() || grad.len() != self.v.len() {
            return Err(Error::Dimension(format!(
                "optimizer holds {} parameters, got params {} and gradient {}",
                self.v.len(),
                params.len(),
                grad.len()
            )));
        }
        let lr = self.learning_rate;
        let mut next = params.to_vec();
        let mut v = self.v.clone();
        let mut m = self.m.clone();
        match self.kind {
            OptimizerKind::Rmsprop => {
                for i in 0..grad.len() {
                    let g = grad[i];
                    v[i] = RMSPROP_DECAY * v[i] + (1.0 - RMSPROP_DECAY) * g * g;
                    next[i] -= lr * g / (v[i].sqrt() + OPTIM_EPS);
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = ADAM_BETAS;
                let t = (self.t + 1) as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for i in 0..grad.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    next[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + OPTIM_EPS);
                }
            }
        }
        if let Some(i) = next.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("update made parameter {i} non-finite")));
        }
        params.copy_from_slice(&next);
        self.v = v;
        self.m = m;
        self.t += 1;
        Ok(())
    }
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        for kind in [OptimizerKind::Rmsprop, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.01, 3).unwrap();
            let mut p = vec![1.0, -2.0, 0.5];
            opt.step(&mut p, &[0.0; 3]).unwrap();
            assert_eq!(p, vec![1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn first_rmsprop_step() {
        let mut opt = Optimizer::new(OptimizerKind::Rmsprop, 0.01, 1).unwrap();
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.01 / (0.1f64.sqrt() + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        for g in [1e-3, 1.0, 250.0, -7.0] {
            let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, 1).unwrap();
            let mut p = vec![0.0];
            opt.step(&mut p, &[g]).unwrap();
            assert!((p[0].abs() - 0.01).abs() < 1e-6, "g={g} step={}", p[0]);
        }
    }

    #[test]
    fn clipping() {
        let mut g = vec![300.0, 400.0];
        assert_eq!(clip_global_norm(&mut g, 100.0), 500.0);
        assert!((g[0] - 60.0).abs() < 1e-12 && (g[1] - 80.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        assert!(Optimizer::new(OptimizerKind::Adam, 0.0, 1).is_err());
    }
}
