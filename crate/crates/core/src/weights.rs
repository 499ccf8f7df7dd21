//! Edge weight functions `w(x, aux; θ)`.
//!
//! Weights are evaluated together with their gradient with respect to the
//! parent coordinate `x`. Evaluation is generic over [`Real`] so that a learned
//! weight, including its `x`-gradient, can be recorded on a tape and
//! differentiated with respect to its parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::taskmaps::Source;

/// Floor added after the softplus so learned weights are strictly positive.
pub const MIN_WEIGHT: f64 = 1e-4;

/// Smoothing length in the radial weight's distance, keeping it differentiable
/// at its centre.
const RADIAL_SMOOTHING: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Elu,
}

impl Activation {
    /// `(σ(z), σ'(z))`
    fn apply<S: Real>(self, z: S) -> (S, S) {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                (t, -(t * t) + 1.0)
            }
            Activation::Elu => {
                if z.value() > 0.0 {
                    (z, S::constant(1.0))
                } else {
                    let e = z.exp();
                    (e - 1.0, e)
                }
            }
        }
    }
}

fn zero() -> f64 {
    0.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    Constant {
        value: f64,
    },
    /// `base + gain·exp(−(‖x − c‖ − r)/ℓ)`: grows as the parent coordinate
    /// approaches the ball of radius `r` around `c`. Positive by construction.
    Radial {
        center: Vec<Source>,
        #[serde(default)]
        radius: Option<Source>,
        base: f64,
        gain: f64,
        length_scale: f64,
    },
    /// Dense network on `(x, aux[aux_inputs])` with a scalar output passed
    /// through `softplus(·) + MIN_WEIGHT`.
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
        #[serde(default)]
        aux_inputs: Vec<usize>,
        /// Subtracted from the parent coordinate before it enters the
        /// network; empty means no offset.
        #[serde(default)]
        offset: Vec<Source>,
        /// Feed the smoothed distance `‖x − offset‖` instead of the
        /// coordinates themselves.
        #[serde(default)]
        distance_input: bool,
        /// Edges naming the same group share one parameter slice.
        #[serde(default)]
        share: Option<String>,
        /// Scale of the initial output layer relative to the default range.
        #[serde(default = "default_output_scale")]
        output_scale: f64,
        #[serde(default = "zero")]
        output_bias: f64,
    },
}

fn default_output_scale() -> f64 {
    0.1
}

impl WeightSpec {
    pub fn constant(value: f64) -> Self {
        WeightSpec::Constant { value }
    }

    pub fn mlp(hidden: &[usize], activation: Activation, aux_inputs: &[usize]) -> Self {
        WeightSpec::Mlp {
            hidden: hidden.to_vec(),
            activation,
            aux_inputs: aux_inputs.to_vec(),
            offset: Vec::new(),
            distance_input: false,
            share: None,
            output_scale: default_output_scale(),
            output_bias: 0.0,
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, WeightSpec::Mlp { .. })
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, WeightSpec::Constant { value } if *value == 1.0)
    }

    pub fn share_group(&self) -> Option<&str> {
        match self {
            WeightSpec::Mlp { share, .. } => share.as_deref(),
            _ => None,
        }
    }

    /// Layer widths from input to the scalar output.
    pub fn layer_sizes(&self, parent_dim: usize) -> Option<Vec<usize>> {
        match self {
            WeightSpec::Mlp {
                hidden,
                aux_inputs,
                distance_input,
                ..
            } => {
                let coords = if *distance_input { 1 } else { parent_dim };
                let mut sizes = vec![coords + aux_inputs.len()];
                sizes.extend(hidden);
                sizes.push(1);
                Some(sizes)
            }
            _ => None,
        }
    }

    pub fn param_count(&self, parent_dim: usize) -> usize {
        self.layer_sizes(parent_dim)
            .map_or(0, |s| s.windows(2).map(|w| w[0] * w[1] + w[1]).sum())
    }

    pub fn validate(&self, parent_dim: usize, aux_dim: usize) -> Result<()> {
        match self {
            WeightSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::Config(format!("constant weight {value} is not finite")));
                }
            }
            WeightSpec::Radial {
                center,
                radius,
                base,
                gain,
                length_scale,
            } => {
                if center.len() != parent_dim {
                    return Err(Error::Dimension(format!(
                        "radial weight centre has {} coordinates, parent has {parent_dim}",
                        center.len()
                    )));
                }
                if !(*base > 0.0) || !(*gain >= 0.0) || !(*length_scale > 0.0) {
                    return Err(Error::Config(
                        "radial weight needs base > 0, gain ≥ 0 and length_scale > 0".into(),
                    ));
                }
                for s in center.iter().chain(radius) {
                    if let Source::Aux { aux } = s {
                        if *aux >= aux_dim {
                            return Err(Error::Config(format!(
                                "radial weight references aux[{aux}] beyond aux length {aux_dim}"
                            )));
                        }
                    }
                }
            }
            WeightSpec::Mlp {
                hidden,
                aux_inputs,
                offset,
                output_scale,
                output_bias,
                ..
            } => {
                if hidden.contains(&0) {
                    return Err(Error::Config("hidden layer widths must be at least 1".into()));
                }
                if parent_dim + aux_inputs.len() == 0 {
                    return Err(Error::Config("weight network has no inputs".into()));
                }
                if let Some(i) = aux_inputs.iter().find(|&&i| i >= aux_dim) {
                    return Err(Error::Config(format!(
                        "weight network reads aux[{i}] beyond aux length {aux_dim}"
                    )));
                }
                if !offset.is_empty() && offset.len() != parent_dim {
                    return Err(Error::Dimension(format!(
                        "weight network offset has {} coordinates, parent has {parent_dim}",
                        offset.len()
                    )));
                }
                if let Some(i) = offset.iter().filter_map(Source::max_aux).find(|&i| i >= aux_dim) {
                    return Err(Error::Config(format!(
                        "weight network offset reads aux[{i}] beyond aux length {aux_dim}"
                    )));
                }
                if !output_scale.is_finite() || !output_bias.is_finite() {
                    return Err(Error::Config("non-finite output initialisation".into()));
                }
            }
        }
        Ok(())
    }

    /// Fresh parameters: uniform in ±1/√fan_in, output layer scaled down.
    pub fn init_params(&self, parent_dim: usize, rng: &mut impl Rng) -> Vec<f64> {
        let Some(sizes) = self.layer_sizes(parent_dim) else {
            return Vec::new();
        };
        let (out_scale, out_bias) = match self {
            WeightSpec::Mlp {
                output_scale,
                output_bias,
                ..
            } => (*output_scale, *output_bias),
            _ => unreachable!(),
        };
        let mut params = Vec::with_capacity(self.param_count(parent_dim));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let scale = if l == last { out_scale } else { 1.0 };
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(scale * rng.random_range(-bound..=bound));
            }
            if l == last {
                *params.last_mut().unwrap() += out_bias;
            }
        }
        params
    }

    /// `(w, ∇ₓw)` at parent coordinate `x`. `params` is this edge's slice.
    pub fn eval<S: Real>(&self, x: &[f64], aux: &[f64], params: &[S]) -> Result<(S, Vec<S>)> {
        let p = x.len();
        match self {
            WeightSpec::Constant { value } => Ok((S::constant(*value), vec![S::zero(); p])),
            WeightSpec::Radial {
                center,
                radius,
                base,
                gain,
                length_scale,
            } => {
                let r = match radius {
                    Some(s) => s.resolve(aux)?,
                    None => 0.0,
                };
                let mut diff = Vec::with_capacity(p);
                for (xi, c) in x.iter().zip(center) {
                    diff.push(xi - c.resolve(aux)?);
                }
                let dist = (diff.iter().map(|d| d * d).sum::<f64>()
                    + RADIAL_SMOOTHING * RADIAL_SMOOTHING)
                    .sqrt();
                let bump = gain * (-(dist - r) / length_scale).exp();
                let grad = diff
                    .iter()
                    .map(|d| S::constant(-bump / length_scale * d / dist))
                    .collect();
                Ok((S::constant(base + bump), grad))
            }
            WeightSpec::Mlp {
                activation,
                aux_inputs,
                offset,
                distance_input,
                ..
            } => {
                let sizes = self.layer_sizes(p).unwrap();
                if params.len() != self.param_count(p) {
                    return Err(Error::Dimension(format!(
                        "weight network needs {} parameters, got {}",
                        self.param_count(p),
                        params.len()
                    )));
                }
                if params.iter().any(|v| !v.value().is_finite()) {
                    return Err(Error::Numeric("non-finite weight parameters".into()));
                }
                let mut rel = x.to_vec();
                for (xi, o) in rel.iter_mut().zip(offset) {
                    *xi -= o.resolve(aux)?;
                }
                let rho = (rel.iter().map(|v| v * v).sum::<f64>() + RADIAL_SMOOTHING * RADIAL_SMOOTHING).sqrt();
                let mut input = if *distance_input { vec![rho] } else { rel.clone() };
                let n_coords = input.len();
                for &i in aux_inputs {
                    input.push(*aux.get(i).ok_or_else(|| {
                        Error::Dimension(format!("aux[{i}] missing from aux of length {}", aux.len()))
                    })?);
                }
                let (raw, draw) = mlp_forward(&sizes, *activation, &input, n_coords, params);
                let w = raw.softplus() + MIN_WEIGHT;
                let slope = raw.sigmoid();
                let grad = if *distance_input {
                    rel.iter().map(|r| draw[0] * slope * (r / rho)).collect()
                } else {
                    draw.into_iter().map(|d| d * slope).collect()
                };
                Ok((w, grad))
            }
        }
    }
}

/// Scalar network output and its gradient with respect to the first `p` inputs.
fn mlp_forward<S: Real>(
    sizes: &[usize],
    activation: Activation,
    input: &[f64],
    p: usize,
    params: &[S],
) -> (S, Vec<S>) {
    let n_layers = sizes.len() - 1;
    let mut offset = 0;

    // First layer: inputs are constants, so z = W·u + b and ∂z/∂x_s = W[:, s].
    let (n_in, n_out) = (sizes[0], sizes[1]);
    let w = &params[offset..offset + n_in * n_out];
    let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
    offset += n_in * n_out + n_out;
    let mut act: Vec<S> = Vec::with_capacity(n_out);
    let mut jac: Vec<Vec<S>> = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut z = b[o];
        for (wi, &ui) in row.iter().zip(input) {
            if ui != 0.0 {
                z = z + *wi * ui;
            }
        }
        act.push(z);
        jac.push(row[..p].to_vec());
    }

    for layer in 1..n_layers {
        // The previous affine output gets its activation now that we know it is hidden.
        for (a, dj) in act.iter_mut().zip(jac.iter_mut()) {
            let (s, ds) = activation.apply(*a);
            *a = s;
            for d in dj.iter_mut() {
                *d = *d * ds;
            }
        }
        let (n_in, n_out) = (sizes[layer], sizes[layer + 1]);
        let w = &params[offset..offset + n_in * n_out];
        let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let mut next_act = Vec::with_capacity(n_out);
        let mut next_jac = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut z = b[o];
            let mut dz = vec![S::zero(); p];
            for (i, wi) in row.iter().enumerate() {
                z = z + *wi * act[i];
                for s in 0..p {
                    dz[s] = dz[s] + *wi * jac[i][s];
                }
            }
            next_act.push(z);
            next_jac.push(dz);
        }
        act = next_act;
        jac = next_jac;
    }
    debug_assert_eq!(act.len(), 1);
    (act[0], jac.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_weight() {
        let (w, g) = WeightSpec::constant(2.0).eval::<f64>(&[1.0, -3.0], &[], &[]).unwrap();
        assert_eq!(w, 2.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_parameters_give_softplus_of_zero() {
        let spec = WeightSpec::mlp(&[8], Activation::Tanh, &[0]);
        let params = vec![0.0; spec.param_count(2)];
        let (w, g) = spec.eval(&[0.3, -0.1], &[2.0], &params).unwrap();
        assert!((w - (std::f64::consts::LN_2 + MIN_WEIGHT)).abs() < 1e-15);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_counts() {
        assert_eq!(WeightSpec::mlp(&[16], Activation::Tanh, &[0, 1]).param_count(2), 97);
        assert_eq!(WeightSpec::mlp(&[], Activation::Tanh, &[]).param_count(3), 4);
        assert_eq!(WeightSpec::constant(1.0).param_count(3), 0);
    }

    #[test]
    fn empty_hidden_is_affine() {
        let spec = WeightSpec::mlp(&[], Activation::Elu, &[]);
        let params = [0.5, -0.25, 0.1];
        let (w, g) = spec.eval(&[1.0, 2.0], &[], &params).unwrap();
        let raw: f64 = 0.5 - 0.5 + 0.1;
        let sig = 1.0 / (1.0 + (-raw).exp());
        assert!((w - ((1.0 + raw.exp()).ln() + MIN_WEIGHT)).abs() < 1e-14);
        assert!((g[0] - 0.5 * sig).abs() < 1e-14 && (g[1] + 0.25 * sig).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (act, distance_input) in [(Activation::Tanh, false), (Activation::Elu, false), (Activation::Tanh, true)] {
            let spec = WeightSpec::Mlp {
                hidden: vec![6, 5],
                activation: act,
                aux_inputs: vec![1],
                offset: vec![Source::Value(0.5), Source::Aux { aux: 0 }, Source::Value(0.0)],
                distance_input,
                share: None,
                output_scale: 1.0,
                output_bias: 0.0,
            };
            let params = spec.init_params(3, &mut rng);
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let aux = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let (_, g) = spec.eval(&x, &aux, &params).unwrap();
                let fd = finite_diff_grad(|x| spec.eval(x, &aux, &params).unwrap().0, &x, 1e-6)
                    .unwrap();
                for (a, b) in g.iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{g:?} vs {fd:?}");
                }
            }
        }
    }

    #[test]
    fn radial_weight_gradient() {
        let spec = WeightSpec::Radial {
            center: vec![Source::Aux { aux: 0 }, Source::Value(1.0)],
            radius: Some(Source::Value(0.5)),
            base: 0.2,
            gain: 3.0,
            length_scale: 0.7,
        };
        spec.validate(2, 1).unwrap();
        let aux = [0.4];
        let x = [1.3, -0.2];
        let (_, g) = spec.eval::<f64>(&x, &aux, &[]).unwrap();
        let fd = finite_diff_grad(|x| spec.eval::<f64>(x, &aux, &[]).unwrap().0, &x, 1e-6).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn validation_errors() {
        let spec = WeightSpec::mlp(&[0], Activation::Tanh, &[]);
        assert!(matches!(spec.validate(2, 0), Err(Error::Config(_))));
        let spec = WeightSpec::mlp(&[4], Activation::Tanh, &[3]);
        assert!(matches!(spec.validate(2, 3), Err(Error::Config(_))));
        assert!(WeightSpec::constant(f64::NAN).validate(2, 0).is_err());
    }
}
