//! Task maps placed on tree edges.
//!
//! Every family provides its value, Jacobian and the curvature vector `J̇ẋ` in
//! closed form. Parameters that describe the environment (goal, obstacle centre
//! and radius, joint bounds) may be literal numbers or references into the
//! auxiliary state, so one tree description serves every environment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

/// Distance from an obstacle centre below which its distance map is undefined.
pub const SINGULAR_RADIUS: f64 = 1e-9;

/// A scalar map parameter: a literal, or an entry of the auxiliary state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Value(f64),
    Aux { aux: usize },
}

impl Source {
    pub fn resolve(&self, aux: &[f64]) -> Result<f64> {
        match *self {
            Source::Value(v) => Ok(v),
            Source::Aux { aux: i } => aux.get(i).copied().ok_or_else(|| {
                Error::Dimension(format!("aux index {i} out of range for aux of length {}", aux.len()))
            }),
        }
    }

    pub(crate) fn max_aux(&self) -> Option<usize> {
        match *self {
            Source::Value(_) => None,
            Source::Aux { aux } => Some(aux),
        }
    }
}

impl From<f64> for Source {
    fn from(v: f64) -> Self {
        Source::Value(v)
    }
}

fn resolve_all(sources: &[Source], aux: &[f64]) -> Result<Vec<f64>> {
    sources.iter().map(|s| s.resolve(aux)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitSide {
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum TaskMap {
    Identity {
        dim: usize,
    },
    Affine {
        a: Matrix,
        b: Vec<f64>,
    },
    /// `y = x − goal`
    GoalOffset {
        goal: Vec<Source>,
    },
    /// Signed distance `‖x − c‖ − r`, negative inside the ball.
    DistanceToPoint {
        center: Vec<Source>,
        radius: Source,
    },
    /// `x_j − bound` (lower) or `bound − x_j` (upper).
    JointLimit1d {
        dim: usize,
        joint: usize,
        bound: Source,
        side: LimitSide,
    },
    /// Position of a point a `fraction` of the way along link `link` of a planar
    /// revolute chain with the given link lengths. Joint angles are relative.
    PlanarFk {
        lengths: Vec<f64>,
        link: usize,
        fraction: f64,
    },
    /// `outer ∘ inner`
    Compose {
        outer: Box<TaskMap>,
        inner: Box<TaskMap>,
    },
}

/// Value, Jacobian and curvature of a map at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct MapEval {
    pub y: Vec<f64>,
    pub yd: Vec<f64>,
    pub j: Matrix,
    pub jdot_xd: Vec<f64>,
}

impl TaskMap {
    pub fn identity(dim: usize) -> Self {
        TaskMap::Identity { dim }
    }

    pub fn affine(a: Matrix, b: Vec<f64>) -> Result<Self> {
        let m = TaskMap::Affine { a, b };
        m.validate(0)?;
        Ok(m)
    }

    pub fn goal_offset(goal: &[f64]) -> Self {
        TaskMap::GoalOffset {
            goal: goal.iter().map(|&v| Source::Value(v)).collect(),
        }
    }

    pub fn distance_to_point(center: &[f64], radius: f64) -> Self {
        TaskMap::DistanceToPoint {
            center: center.iter().map(|&v| Source::Value(v)).collect(),
            radius: Source::Value(radius),
        }
    }

    pub fn joint_limit(dim: usize, joint: usize, bound: f64, side: LimitSide) -> Self {
        TaskMap::JointLimit1d {
            dim,
            joint,
            bound: Source::Value(bound),
            side,
        }
    }

    pub fn planar_fk(lengths: &[f64], link: usize, fraction: f64) -> Result<Self> {
        let m = TaskMap::PlanarFk {
            lengths: lengths.to_vec(),
            link,
            fraction,
        };
        m.validate(0)?;
        Ok(m)
    }

    pub fn compose(outer: TaskMap, inner: TaskMap) -> Result<Self> {
        if inner.out_dim() != outer.in_dim() {
            return Err(Error::Dimension(format!(
                "cannot compose: inner map outputs {} coordinates, outer expects {}",
                inner.out_dim(),
                outer.in_dim()
            )));
        }
        Ok(TaskMap::Compose {
            outer: Box::new(outer),
            inner: Box::new(inner),
        })
    }

    pub fn in_dim(&self) -> usize {
        match self {
            TaskMap::Identity { dim } => *dim,
            TaskMap::Affine { a, .. } => a.cols(),
            TaskMap::GoalOffset { goal } => goal.len(),
            TaskMap::DistanceToPoint { center, .. } => center.len(),
            TaskMap::JointLimit1d { dim, .. } => *dim,
            TaskMap::PlanarFk { lengths, .. } => lengths.len(),
            TaskMap::Compose { inner, .. } => inner.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            TaskMap::Identity { dim } => *dim,
            TaskMap::Affine { a, .. } => a.rows(),
            TaskMap::GoalOffset { goal } => goal.len(),
            TaskMap::DistanceToPoint { .. } | TaskMap::JointLimit1d { .. } => 1,
            TaskMap::PlanarFk { .. } => 2,
            TaskMap::Compose { outer, .. } => outer.out_dim(),
        }
    }

    /// Structural checks; `aux_dim` bounds any auxiliary-state references.
    pub fn validate(&self, aux_dim: usize) -> Result<()> {
        let check_aux = |s: &Source| match s.max_aux() {
            Some(i) if i >= aux_dim => Err(Error::Config(format!(
                "map references aux[{i}] but the aux state has {aux_dim} entries"
            ))),
            _ => Ok(()),
        };
        match self {
            TaskMap::Identity { dim } if *dim == 0 => {
                Err(Error::Config("identity map needs a positive dimension".into()))
            }
            TaskMap::Identity { .. } => Ok(()),
            TaskMap::Affine { a, b } => {
                if a.rows() != b.len() {
                    return Err(Error::Dimension(format!(
                        "affine map: A has {} rows but b has {} entries",
                        a.rows(),
                        b.len()
                    )));
                }
                if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("affine map has non-finite parameters".into()));
                }
                Ok(())
            }
            TaskMap::GoalOffset { goal } => goal.iter().try_for_each(check_aux),
            TaskMap::DistanceToPoint { center, radius } => {
                center.iter().try_for_each(check_aux)?;
                check_aux(radius)
            }
            TaskMap::JointLimit1d { dim, joint, bound, .. } => {
                if joint >= dim {
                    return Err(Error::Config(format!(
                        "joint limit on joint {joint} of a {dim}-joint configuration"
                    )));
                }
                check_aux(bound)
            }
            TaskMap::PlanarFk {
                lengths,
                link,
                fraction,
            } => {
                if *link >= lengths.len() {
                    return Err(Error::Config(format!(
                        "planar_fk link {link} out of range for {} links",
                        lengths.len()
                    )));
                }
                if lengths.iter().any(|l| !(*l > 0.0)) || !(0.0..=1.0).contains(fraction) {
                    return Err(Error::Config(
                        "planar_fk needs positive link lengths and a fraction in [0, 1]".into(),
                    ));
                }
                Ok(())
            }
            TaskMap::Compose { outer, inner } => {
                if inner.out_dim() != outer.in_dim() {
                    return Err(Error::Dimension(format!(
                        "compose: inner outputs {} coordinates, outer expects {}",
                        inner.out_dim(),
                        outer.in_dim()
                    )));
                }
                inner.validate(aux_dim)?;
                outer.validate(aux_dim)
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "map expects {} coordinates, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        match self {
            TaskMap::Identity { .. } => Ok(x.to_vec()),
            TaskMap::Affine { a, b } => {
                let mut y = a.matvec(x)?;
                y.iter_mut().zip(b).for_each(|(yi, bi)| *yi += bi);
                Ok(y)
            }
            TaskMap::GoalOffset { goal } => {
                let g = resolve_all(goal, aux)?;
                Ok(x.iter().zip(&g).map(|(a, b)| a - b).collect())
            }
            TaskMap::DistanceToPoint { center, radius } => {
                let (rho, _) = offset_from(x, center, aux)?;
                Ok(vec![rho - radius.resolve(aux)?])
            }
            TaskMap::JointLimit1d {
                joint, bound, side, ..
            } => {
                let b = bound.resolve(aux)?;
                Ok(vec![match side {
                    LimitSide::Lower => x[*joint] - b,
                    LimitSide::Upper => b - x[*joint],
                }])
            }
            TaskMap::PlanarFk {
                lengths,
                link,
                fraction,
            } => {
                let mut p = [0.0, 0.0];
                let mut phi = 0.0;
                for j in 0..=*link {
                    phi += x[j];
                    let l = segment_length(lengths, *link, *fraction, j);
                    p[0] += l * phi.cos();
                    p[1] += l * phi.sin();
                }
                Ok(p.to_vec())
            }
            TaskMap::Compose { outer, inner } => outer.eval(&inner.eval(x, aux)?, aux),
        }
    }

    pub fn jacobian(&self, x: &[f64], aux: &[f64]) -> Result<Matrix> {
        self.check_input(x)?;
        let n = x.len();
        match self {
            TaskMap::Identity { dim } => Ok(Matrix::identity(*dim)),
            TaskMap::Affine { a, .. } => Ok(a.clone()),
            TaskMap::GoalOffset { .. } => Ok(Matrix::identity(n)),
            TaskMap::DistanceToPoint { center, .. } => {
                let (rho, diff) = offset_from(x, center, aux)?;
                Matrix::new(1, n, diff.iter().map(|d| d / rho).collect())
            }
            TaskMap::JointLimit1d { joint, side, .. } => {
                let mut row = vec![0.0; n];
                row[*joint] = match side {
                    LimitSide::Lower => 1.0,
                    LimitSide::Upper => -1.0,
                };
                Matrix::new(1, n, row)
            }
            TaskMap::PlanarFk {
                lengths,
                link,
                fraction,
            } => {
                let mut j = Matrix::zeros(2, n);
                let phis = cumulative(x, *link);
                for (k, &phi) in phis.iter().enumerate() {
                    let l = segment_length(lengths, *link, *fraction, k);
                    let (s, c) = phi.sin_cos();
                    // segment k moves with every joint i ≤ k
                    for i in 0..=k {
                        j.set(0, i, j.get(0, i) - l * s);
                        j.set(1, i, j.get(1, i) + l * c);
                    }
                }
                Ok(j)
            }
            TaskMap::Compose { outer, inner } => {
                let z = inner.eval(x, aux)?;
                outer.jacobian(&z, aux)?.matmul(&inner.jacobian(x, aux)?)
            }
        }
    }

    /// `J̇(x, ẋ) ẋ`.
    pub fn curvature(&self, x: &[f64], xd: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_input(xd)?;
        match self {
            TaskMap::Identity { .. }
            | TaskMap::Affine { .. }
            | TaskMap::GoalOffset { .. }
            | TaskMap::JointLimit1d { .. } => Ok(vec![0.0; self.out_dim()]),
            TaskMap::DistanceToPoint { center, .. } => {
                let (rho, diff) = offset_from(x, center, aux)?;
                let radial = dot(&diff, xd) / rho;
                Ok(vec![(dot(xd, xd) - radial * radial) / rho])
            }
            TaskMap::PlanarFk {
                lengths,
                link,
                fraction,
            } => {
                let phis = cumulative(x, *link);
                let rates = cumulative(xd, *link);
                let mut out = vec![0.0, 0.0];
                for (k, (&phi, &rate)) in phis.iter().zip(&rates).enumerate() {
                    let l = segment_length(lengths, *link, *fraction, k);
                    let (s, c) = phi.sin_cos();
                    out[0] -= l * c * rate * rate;
                    out[1] -= l * s * rate * rate;
                }
                Ok(out)
            }
            TaskMap::Compose { outer, inner } => {
                let z = inner.eval(x, aux)?;
                let ji = inner.jacobian(x, aux)?;
                let zd = ji.matvec(xd)?;
                let jo = outer.jacobian(&z, aux)?;
                let mut out = jo.matvec(&inner.curvature(x, xd, aux)?)?;
                for (o, c) in out.iter_mut().zip(outer.curvature(&z, &zd, aux)?) {
                    *o += c;
                }
                Ok(out)
            }
        }
    }

    /// Everything pushforward and pullback need from this map at `(x, ẋ)`.
    pub fn evaluate(&self, x: &[f64], xd: &[f64], aux: &[f64]) -> Result<MapEval> {
        let y = self.eval(x, aux)?;
        let j = self.jacobian(x, aux)?;
        let yd = j.matvec(xd)?;
        let jdot_xd = self.curvature(x, xd, aux)?;
        Ok(MapEval { y, yd, j, jdot_xd })
    }
}

fn offset_from(x: &[f64], center: &[Source], aux: &[f64]) -> Result<(f64, Vec<f64>)> {
    let c = resolve_all(center, aux)?;
    let diff: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
    let rho = dot(&diff, &diff).sqrt();
    if rho < SINGULAR_RADIUS {
        return Err(Error::Singularity(format!(
            "distance map evaluated {rho:.3e} from its centre"
        )));
    }
    Ok((rho, diff))
}

fn cumulative(x: &[f64], upto: usize) -> Vec<f64> {
    x[..=upto]
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

fn segment_length(lengths: &[f64], link: usize, fraction: f64, k: usize) -> f64 {
    if k == link {
        lengths[k] * fraction
    } else {
        lengths[k]
    }
}
