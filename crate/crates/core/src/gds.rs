//! Geometric dynamical systems used as leaf policies.
//!
//! A GDS is a metric `G(x, ẋ)`, a damping `B(x, ẋ)` and a potential `Φ(x)`.
//! Its natural-form policy is `f = −∇Φ − Bẋ − ξ_G` with inertia `M = G + Ξ_G`,
//! where the curvature terms come from the state dependence of the metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

/// Default floor added to metrics that would otherwise vanish.
pub const DEFAULT_METRIC_EPS: f64 = 1e-6;

pub trait Gds {
    fn dim(&self) -> usize;
    fn metric(&self, x: &[f64], xd: &[f64]) -> Matrix;
    /// `(∂G/∂x_s, ∂G/∂ẋ_s)` for every coordinate `s`.
    fn metric_partials(&self, x: &[f64], xd: &[f64]) -> (Vec<Matrix>, Vec<Matrix>);
    fn damping(&self, x: &[f64], xd: &[f64]) -> Matrix;
    fn potential(&self, x: &[f64]) -> f64;
    fn potential_grad(&self, x: &[f64]) -> Vec<f64>;
    fn potential_lower_bound(&self) -> f64;
}

/// Everything a leaf contributes to the tree at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafOutput {
    pub f: Vec<f64>,
    pub m: Matrix,
    pub g: Matrix,
    pub b: Matrix,
    pub phi: f64,
    pub l: f64,
    pub v: f64,
}

fn check_dims(spec: &dyn Gds, x: &[f64], xd: &[f64]) -> Result<()> {
    let n = spec.dim();
    if x.len() != n || xd.len() != n {
        return Err(Error::Dimension(format!(
            "leaf of dimension {n} evaluated at state of sizes ({}, {})",
            x.len(),
            xd.len()
        )));
    }
    Ok(())
}

/// `(Ξ_G, ξ_G)` at `(x, ẋ)`:
/// `Ξ_rs = ½ Σ_i ẋ_i ∂G_ri/∂ẋ_s` and
/// `ξ_r = Σ_{i,s} ∂G_ri/∂x_s ẋ_s ẋ_i − ½ Σ_{a,b} ẋ_a ∂G_ab/∂x_r ẋ_b`.
pub fn gds_curvature(spec: &dyn Gds, x: &[f64], xd: &[f64]) -> Result<(Matrix, Vec<f64>)> {
    check_dims(spec, x, xd)?;
    let n = spec.dim();
    let (dx, dxd) = spec.metric_partials(x, xd);
    if dx.len() != n || dxd.len() != n {
        return Err(Error::Dimension("metric partials have the wrong count".into()));
    }
    if dx.iter().chain(&dxd).any(|m| !m.is_finite()) {
        return Err(Error::Numeric("non-finite metric partials".into()));
    }
    let mut big_xi = Matrix::zeros(n, n);
    for r in 0..n {
        for s in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += xd[i] * dxd[s].get(r, i);
            }
            big_xi.set(r, s, 0.5 * acc);
        }
    }
    let mut xi = vec![0.0; n];
    for r in 0..n {
        let mut acc = 0.0;
        for s in 0..n {
            if xd[s] == 0.0 {
                continue;
            }
            for i in 0..n {
                acc += dx[s].get(r, i) * xd[s] * xd[i];
            }
        }
        let gx = dx[r].matvec(xd)?;
        xi[r] = acc - 0.5 * dot(xd, &gx);
    }
    Ok((big_xi, xi))
}

pub fn gds_evaluate(spec: &dyn Gds, x: &[f64], xd: &[f64]) -> Result<LeafOutput> {
    let (big_xi, xi) = gds_curvature(spec, x, xd)?;
    let g = spec.metric(x, xd);
    let b = spec.damping(x, xd);
    let phi = spec.potential(x);
    let grad = spec.potential_grad(x);
    let bxd = b.matvec(xd)?;
    let f: Vec<f64> = (0..x.len()).map(|i| -grad[i] - bxd[i] - xi[i]).collect();
    let m = g.add(&big_xi)?;
    let kinetic = 0.5 * dot(xd, &g.matvec(xd)?);
    let out = LeafOutput {
        f,
        m,
        g,
        b,
        phi,
        l: kinetic - phi,
        v: kinetic + phi,
    };
    if !out.phi.is_finite() || out.f.iter().any(|v| !v.is_finite()) || !out.m.is_finite() {
        return Err(Error::Numeric("leaf produced a non-finite output".into()));
    }
    Ok(out)
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn default_softness() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    DEFAULT_METRIC_EPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractorGains {
    pub dim: usize,
    pub stiffness: f64,
    pub damping: f64,
    pub metric_scale: f64,
    /// `β` of the soft-norm potential; larger is closer to a cone.
    #[serde(default = "default_softness")]
    pub softness: f64,
}

/// Gains of the one-dimensional barrier leaves (obstacles, joint limits).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierGains {
    /// Strength of the velocity-gated metric.
    pub scale: f64,
    pub length_scale: f64,
    pub damping: f64,
    /// Strength of the repulsive potential; defaults to `scale`.
    #[serde(default)]
    pub barrier: Option<f64>,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl BarrierGains {
    pub fn new(scale: f64, length_scale: f64, damping: f64) -> Self {
        BarrierGains {
            scale,
            length_scale,
            damping,
            barrier: None,
            eps: DEFAULT_METRIC_EPS,
        }
    }

    fn barrier(&self) -> f64 {
        self.barrier.unwrap_or(self.scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "leaf_kind", content = "gains", rename_all = "snake_case")]
pub enum LeafSpec {
    /// Soft-norm attractor on goal-offset coordinates:
    /// `Φ = k(‖y‖ − ln(1 + β‖y‖)/β)`, `G = s·I`, `B = b·I`.
    Attractor(AttractorGains),
    /// Barrier on a signed distance `d`:
    /// `G = s·e^{−d/ℓ}·relu(−ḋ)² + ε`, `Φ = p·ℓ·e^{−d/ℓ}`, `B = b·e^{−d/ℓ}`.
    Obstacle(BarrierGains),
    /// Same form as [`LeafSpec::Obstacle`] on a joint-limit coordinate.
    JointLimit(BarrierGains),
    /// `G = ε·I`, `B = b·I`, `Φ = 0`.
    Damper {
        dim: usize,
        damping: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    /// `G = ε·I`, `B = 0`, `Φ = 0`.
    IdentityMetric { dim: usize, eps: f64 },
    /// Position-dependent isotropic metric `G = (g₀ + c‖y‖²)·I` with
    /// `Φ = ½k‖y‖²` and `B = b·I`.
    RadialMetric {
        dim: usize,
        base: f64,
        curvature: f64,
        stiffness: f64,
        damping: f64,
    },
    /// Mass-spring-damper `m·ẍ = −k·x − b·ẋ` with constant coefficients.
    Spring {
        dim: usize,
        mass: f64,
        stiffness: f64,
        damping: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be non-negative, got {v}")))
    }
}

fn positive_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::Config("leaf dimension must be positive".into()));
    }
    Ok(())
}

impl LeafSpec {
    pub fn attractor(dim: usize, stiffness: f64, damping: f64, metric_scale: f64) -> Result<Self> {
        let s = LeafSpec::Attractor(AttractorGains {
            dim,
            stiffness,
            damping,
            metric_scale,
            softness: default_softness(),
        });
        s.validate()?;
        Ok(s)
    }

    pub fn obstacle(gains: BarrierGains) -> Result<Self> {
        let s = LeafSpec::Obstacle(gains);
        s.validate()?;
        Ok(s)
    }

    pub fn joint_limit(gains: BarrierGains) -> Result<Self> {
        let s = LeafSpec::JointLimit(gains);
        s.validate()?;
        Ok(s)
    }

    pub fn damper(dim: usize, damping: f64) -> Result<Self> {
        let s = LeafSpec::Damper {
            dim,
            damping,
            eps: DEFAULT_METRIC_EPS,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn identity_metric(dim: usize, eps: f64) -> Result<Self> {
        let s = LeafSpec::IdentityMetric { dim, eps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LeafSpec::Attractor(g) => {
                positive_dim(g.dim)?;
                positive("stiffness", g.stiffness)?;
                positive("damping", g.damping)?;
                positive("metric_scale", g.metric_scale)?;
                positive("softness", g.softness)
            }
            LeafSpec::Obstacle(g) | LeafSpec::JointLimit(g) => {
                positive("scale", g.scale)?;
                positive("length_scale", g.length_scale)?;
                positive("damping", g.damping)?;
                positive("barrier", g.barrier())?;
                positive("eps", g.eps)
            }
            LeafSpec::Damper { dim, damping, eps } => {
                positive_dim(*dim)?;
                positive("damping", *damping)?;
                positive("eps", *eps)
            }
            LeafSpec::IdentityMetric { dim, eps } => {
                positive_dim(*dim)?;
                positive("eps", *eps)
            }
            LeafSpec::RadialMetric {
                dim,
                base,
                curvature,
                stiffness,
                damping,
            } => {
                positive_dim(*dim)?;
                positive("base", *base)?;
                non_negative("curvature", *curvature)?;
                non_negative("stiffness", *stiffness)?;
                non_negative("damping", *damping)
            }
            LeafSpec::Spring {
                dim,
                mass,
                stiffness,
                damping,
            } => {
                positive_dim(*dim)?;
                positive("mass", *mass)?;
                non_negative("stiffness", *stiffness)?;
                non_negative("damping", *damping)
            }
        }
    }

    pub fn evaluate(&self, x: &[f64], xd: &[f64]) -> Result<LeafOutput> {
        gds_evaluate(self, x, xd)
    }

    /// Copy of this leaf with all damping removed.
    pub fn undamped(&self) -> Self {
        let mut out = self.clone();
        match &mut out {
            LeafSpec::Attractor(g) => g.damping = 0.0,
            LeafSpec::Obstacle(g) | LeafSpec::JointLimit(g) => g.damping = 0.0,
            LeafSpec::Damper { damping, .. }
            | LeafSpec::RadialMetric { damping, .. }
            | LeafSpec::Spring { damping, .. } => *damping = 0.0,
            LeafSpec::IdentityMetric { .. } => {}
        }
        out
    }
}

fn scaled_identity(n: usize, s: f64) -> Matrix {
    Matrix::identity(n).scale(s)
}

fn zero_partials(n: usize) -> (Vec<Matrix>, Vec<Matrix>) {
    (vec![Matrix::zeros(n, n); n], vec![Matrix::zeros(n, n); n])
}

impl Gds for LeafSpec {
    fn dim(&self) -> usize {
        match self {
            LeafSpec::Attractor(g) => g.dim,
            LeafSpec::Obstacle(_) | LeafSpec::JointLimit(_) => 1,
            LeafSpec::Damper { dim, .. }
            | LeafSpec::IdentityMetric { dim, .. }
            | LeafSpec::RadialMetric { dim, .. }
            | LeafSpec::Spring { dim, .. } => *dim,
        }
    }

    fn metric(&self, x: &[f64], xd: &[f64]) -> Matrix {
        let n = self.dim();
        match self {
            LeafSpec::Attractor(g) => scaled_identity(n, g.metric_scale),
            LeafSpec::Obstacle(g) | LeafSpec::JointLimit(g) => {
                let gate = relu(-xd[0]);
                let v = g.scale * (-x[0] / g.length_scale).exp() * gate * gate + g.eps;
                Matrix::diag(&[v])
            }
            LeafSpec::Damper { eps, .. } | LeafSpec::IdentityMetric { eps, .. } => {
                scaled_identity(n, *eps)
            }
            LeafSpec::RadialMetric { base, curvature, .. } => {
                scaled_identity(n, base + curvature * dot(x, x))
            }
            LeafSpec::Spring { mass, .. } => scaled_identity(n, *mass),
        }
    }

    fn metric_partials(&self, x: &[f64], xd: &[f64]) -> (Vec<Matrix>, Vec<Matrix>) {
        let n = self.dim();
        match self {
            LeafSpec::Obstacle(g) | LeafSpec::JointLimit(g) => {
                let decay = (-x[0] / g.length_scale).exp();
                let gate = relu(-xd[0]);
                let d_pos = -g.scale * decay * gate * gate / g.length_scale;
                let d_vel = -2.0 * g.scale * decay * gate;
                (vec![Matrix::diag(&[d_pos])], vec![Matrix::diag(&[d_vel])])
            }
            LeafSpec::RadialMetric { curvature, .. } => {
                let dx = (0..n)
                    .map(|s| scaled_identity(n, 2.0 * curvature * x[s]))
                    .collect();
                (dx, vec![Matrix::zeros(n, n); n])
            }
            _ => zero_partials(n),
        }
    }

    fn damping(&self, x: &[f64], _xd: &[f64]) -> Matrix {
        let n = self.dim();
        match self {
            LeafSpec::Attractor(g) => scaled_identity(n, g.damping),
            LeafSpec::Obstacle(g) | LeafSpec::JointLimit(g) => {
                Matrix::diag(&[g.damping * (-x[0] / g.length_scale).exp()])
            }
            LeafSpec::Damper { damping, .. }
            | LeafSpec::RadialMetric { damping, .. }
            | LeafSpec::Spring { damping, .. } => scaled_identity(n, *damping),
            LeafSpec::IdentityMetric { .. } => Matrix::zeros(n, n),
        }
    }

    fn potential(&self, x: &[f64]) -> f64 {
        match self {
            LeafSpec::Attractor(g) => {
                let r = dot(x, x).sqrt();
                let beta = g.softness;
                g.stiffness * (r - (beta * r).ln_1p() / beta)
            }
            LeafSpec::Obstacle(g) | LeafSpec::JointLimit(g) => {
                g.barrier() * g.length_scale * (-x[0] / g.length_scale).exp()
            }
            LeafSpec::Damper { .. } | LeafSpec::IdentityMetric { .. } => 0.0,
            LeafSpec::RadialMetric { stiffness, .. } | LeafSpec::Spring { stiffness, .. } => {
                0.5 * stiffness * dot(x, x)
            }
        }
    }

    fn potential_grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            LeafSpec::Attractor(g) => {
                let r = dot(x, x).sqrt();
                let c = g.stiffness * g.softness / (1.0 + g.softness * r);
                x.iter().map(|v| c * v).collect()
            }
            LeafSpec::Obstacle(g) | LeafSpec::JointLimit(g) => {
                vec![-g.barrier() * (-x[0] / g.length_scale).exp()]
            }
            LeafSpec::Damper { dim, .. } | LeafSpec::IdentityMetric { dim, .. } => vec![0.0; *dim],
            LeafSpec::RadialMetric { stiffness, .. } | LeafSpec::Spring { stiffness, .. } => {
                x.iter().map(|v| stiffness * v).collect()
            }
        }
    }

    fn potential_lower_bound(&self) -> f64 {
        0.0
    }
}
