//! Environments, fixed-step integration, instrumented rollouts, dataset
//! generation and evaluation metrics.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learn::{loss_mse, Dataset, MlpPolicy, Record, Split};
use crate::tree::{EvalOptions, Tree};

pub const GOAL_TOLERANCE: f64 = 0.05;
pub const DEFAULT_DT: f64 = 1e-2;
pub const DEFAULT_HORIZON: f64 = 10.0;
pub const MAX_SAMPLING_ATTEMPTS: usize = 10_000;
/// Spacing of the online-loss probes along learner rollouts, in seconds.
pub const ONLINE_LOSS_INTERVAL: f64 = 1.0;

/// Output of a policy at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub a: Vec<f64>,
    /// Root Lyapunov value, when the policy has one.
    pub v: Option<f64>,
}

pub trait Policy: Sync {
    fn dim(&self) -> usize;
    fn act(&self, q: &[f64], qd: &[f64], aux: &[f64]) -> Result<Action>;
}

/// A tree with fixed weight parameters.
#[derive(Clone, Debug)]
pub struct TreePolicy {
    pub tree: Tree,
    pub params: Vec<f64>,
    pub opts: EvalOptions,
}

impl TreePolicy {
    pub fn new(tree: Tree, params: Vec<f64>) -> Result<Self> {
        if params.len() != tree.n_params() {
            return Err(Error::Dimension(format!(
                "tree `{}` has {} parameters, got {}",
                tree.name(),
                tree.n_params(),
                params.len()
            )));
        }
        Ok(TreePolicy {
            tree,
            params,
            opts: EvalOptions::default(),
        })
    }
}

impl Policy for TreePolicy {
    fn dim(&self) -> usize {
        self.tree.root_dim()
    }

    fn act(&self, q: &[f64], qd: &[f64], aux: &[f64]) -> Result<Action> {
        let out = self
            .tree
            .evaluate_policy_with(q, qd, aux, &self.params, &self.opts)?;
        Ok(Action {
            a: out.a,
            v: Some(out.root.v),
        })
    }
}

/// The unstructured baseline with fixed parameters.
#[derive(Clone, Debug)]
pub struct NetworkPolicy {
    pub policy: MlpPolicy,
    pub params: Vec<f64>,
}

impl Policy for NetworkPolicy {
    fn dim(&self) -> usize {
        self.policy.root_dim
    }

    fn act(&self, q: &[f64], qd: &[f64], aux: &[f64]) -> Result<Action> {
        let input = self.policy.input(q, qd, aux)?;
        Ok(Action {
            a: self.policy.forward::<f64>(&input, &self.params)?,
            v: None,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroPolicy {
    pub dim: usize,
}

impl Policy for ZeroPolicy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn act(&self, _q: &[f64], _qd: &[f64], _aux: &[f64]) -> Result<Action> {
        Ok(Action {
            a: vec![0.0; self.dim],
            v: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Environments

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == 2 && (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    fn validate(&self, what: &str) -> Result<()> {
        if (0..2).any(|i| !(self.min[i] <= self.max[i]) || !self.min[i].is_finite() || !self.max[i].is_finite()) {
            return Err(Error::Config(format!("{what} has min above max or non-finite corners")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> [f64; 2] {
        [uniform(rng, self.min[0], self.max[0]), uniform(rng, self.min[1], self.max[1])]
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Robot {
    /// A point mass in the plane.
    Point2d,
    /// Serial arm with relative joint angles and its base at the origin.
    PlanarArm {
        lengths: Vec<f64>,
        joint_lower: Vec<f64>,
        joint_upper: Vec<f64>,
    },
}

impl Robot {
    pub fn dim(&self) -> usize {
        match self {
            Robot::Point2d => 2,
            Robot::PlanarArm { lengths, .. } => lengths.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Robot::PlanarArm {
            lengths,
            joint_lower,
            joint_upper,
        } = self
        {
            if lengths.is_empty() || lengths.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::Config("arm link lengths must be positive".into()));
            }
            if joint_lower.len() != lengths.len() || joint_upper.len() != lengths.len() {
                return Err(Error::Config("arm joint limits must match the number of links".into()));
            }
            if joint_lower.iter().zip(joint_upper).any(|(l, u)| !(l < u)) {
                return Err(Error::Config("arm joint lower limits must be below upper limits".into()));
            }
        }
        Ok(())
    }

    /// Base, joints and tip in the plane.
    pub fn body_points(&self, q: &[f64]) -> Vec<[f64; 2]> {
        match self {
            Robot::Point2d => vec![[q[0], q[1]]],
            Robot::PlanarArm { lengths, .. } => {
                let mut pts = vec![[0.0, 0.0]];
                let (mut p, mut phi) = ([0.0, 0.0], 0.0);
                for (l, qi) in lengths.iter().zip(q) {
                    phi += qi;
                    p[0] += l * phi.cos();
                    p[1] += l * phi.sin();
                    pts.push(p);
                }
                pts
            }
        }
    }

    /// The point that has to reach the goal.
    pub fn task_point(&self, q: &[f64]) -> [f64; 2] {
        *self.body_points(q).last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub robot: Robot,
    pub bounds: Bounds,
    pub goal: [f64; 2],
    pub obstacles: Vec<Obstacle>,
}

impl Environment {
    pub fn new(robot: Robot, bounds: Bounds, goal: [f64; 2], obstacles: Vec<Obstacle>) -> Result<Self> {
        let env = Environment {
            robot,
            bounds,
            goal,
            obstacles,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.bounds.validate("workspace bounds")?;
        if !self.bounds.contains(&self.goal) {
            return Err(Error::Config(format!("goal {:?} lies outside the workspace", self.goal)));
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) || !o.radius.is_finite() || o.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config(format!("obstacle {k} needs a finite centre and positive radius")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.robot.dim()
    }

    /// `[goal(2), per obstacle: centre(2), radius(1)]`
    pub fn aux(&self) -> Vec<f64> {
        let mut aux = self.goal.to_vec();
        for o in &self.obstacles {
            aux.extend([o.center[0], o.center[1], o.radius]);
        }
        aux
    }

    pub fn aux_dim(n_obstacles: usize) -> usize {
        2 + 3 * n_obstacles
    }

    pub fn from_aux(robot: Robot, bounds: Bounds, aux: &[f64]) -> Result<Self> {
        if aux.len() < 2 || !(aux.len() - 2).is_multiple_of(3) {
            return Err(Error::Dimension(format!(
                "aux of length {} is not [goal(2), 3 per obstacle]",
                aux.len()
            )));
        }
        let obstacles = aux[2..]
            .chunks(3)
            .map(|c| Obstacle {
                center: [c[0], c[1]],
                radius: c[2],
            })
            .collect();
        Environment::new(robot, bounds, [aux[0], aux[1]], obstacles)
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("environment serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Smallest signed distance from the robot body to any obstacle surface;
    /// `+∞` without obstacles.
    pub fn signed_distance(&self, q: &[f64]) -> f64 {
        let pts = self.robot.body_points(q);
        let mut best = f64::INFINITY;
        for o in &self.obstacles {
            let d = if pts.len() == 1 {
                dist2(&pts[0], &o.center)
            } else {
                pts.windows(2)
                    .map(|s| segment_distance(&s[0], &s[1], &o.center))
                    .fold(f64::INFINITY, f64::min)
            };
            best = best.min(d - o.radius);
        }
        best
    }

    pub fn goal_distance(&self, q: &[f64]) -> f64 {
        dist2(&self.robot.task_point(q), &self.goal)
    }

    /// Whether `q` is an admissible configuration (inside the workspace for
    /// a point, inside the joint limits for an arm).
    pub fn admits(&self, q: &[f64]) -> bool {
        if q.len() != self.dim() || q.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match &self.robot {
            Robot::Point2d => self.bounds.contains(q),
            Robot::PlanarArm {
                joint_lower,
                joint_upper,
                ..
            } => q
                .iter()
                .zip(joint_lower.iter().zip(joint_upper))
                .all(|(v, (l, u))| v >= l && v <= u),
        }
    }
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn segment_distance(a: &[f64; 2], b: &[f64; 2], p: &[f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist2(&[a[0] + s * ab[0], a[1] + s * ab[1]], p)
}

// ---------------------------------------------------------------------------
// Integration and rollouts

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            _ => Err(Error::Config(format!("unknown integration method `{s}` (expected euler or rk4)"))),
        }
    }
}

/// One explicit step of `q̈ = π(q, q̇)`.
pub fn integrate_step(
    policy: &dyn Policy,
    q: &[f64],
    qd: &[f64],
    aux: &[f64],
    dt: f64,
    method: Method,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let a0 = policy.act(q, qd, aux)?.a;
    step_from(policy, q, qd, &a0, aux, dt, method)
}

/// Like [`integrate_step`] with the acceleration at the start already known.
fn step_from(
    policy: &dyn Policy,
    q: &[f64],
    qd: &[f64],
    a0: &[f64],
    aux: &[f64],
    dt: f64,
    method: Method,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if q.len() != qd.len() || a0.len() != q.len() {
        return Err(Error::Dimension(format!(
            "state dimensions disagree: q {}, qd {}, a {}",
            q.len(),
            qd.len(),
            a0.len()
        )));
    }
    let axpy = |x: &[f64], s: f64, y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a + s * b).collect() };
    let (q1, qd1) = match method {
        Method::Euler => (axpy(q, dt, qd), axpy(qd, dt, a0)),
        Method::Rk4 => {
            let h = 0.5 * dt;
            let (k1q, k1v) = (qd.to_vec(), a0.to_vec());
            let (q2, v2) = (axpy(q, h, &k1q), axpy(qd, h, &k1v));
            let k2v = policy.act(&q2, &v2, aux)?.a;
            let (q3, v3) = (axpy(q, h, &v2), axpy(qd, h, &k2v));
            let k3v = policy.act(&q3, &v3, aux)?.a;
            let (q4, v4) = (axpy(q, dt, &v3), axpy(qd, dt, &k3v));
            let k4v = policy.act(&q4, &v4, aux)?.a;
            let combine = |x: &[f64], k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]| -> Vec<f64> {
                (0..x.len())
                    .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            };
            (
                combine(q, &k1q, &v2, &v3, &v4),
                combine(qd, &k1v, &k2v, &k3v, &k4v),
            )
        }
    };
    if q1.iter().chain(&qd1).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("integration produced a non-finite state".into()));
    }
    Ok((q1, qd1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_goal_tolerance")]
    pub goal_tolerance: f64,
}

fn default_goal_tolerance() -> f64 {
    GOAL_TOLERANCE
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            dt: DEFAULT_DT,
            horizon: DEFAULT_HORIZON,
            method: Method::Rk4,
            goal_tolerance: GOAL_TOLERANCE,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be non-negative, got {}", self.horizon)));
        }
        if !(self.goal_tolerance >= 0.0) {
            return Err(Error::Config("goal tolerance must be non-negative".into()));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub a: Vec<f64>,
    pub v: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Events {
    /// Time of the first sample in contact with an obstacle.
    pub collision: Option<f64>,
    pub goal_reached: Option<f64>,
    pub timed_out: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Goal,
    Collision,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<Sample>,
    pub events: Events,
}

impl Trajectory {
    pub fn outcome(&self) -> Outcome {
        if self.events.collision.is_some() {
            Outcome::Collision
        } else if self.events.goal_reached.is_some() {
            Outcome::Goal
        } else {
            Outcome::Timeout
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// Largest increase of the recorded Lyapunov value between consecutive
    /// samples; `None` if the policy does not report one.
    pub fn max_v_increment(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.samples.iter().map(|s| s.v).collect();
        let v = v?;
        Some(v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max))
    }

    /// Tabular text: a header `t,q0..,qd0..,a0..,V` and one row per sample.
    /// `V` is empty for policies without a Lyapunov function.
    pub fn write_table(&self, w: impl Write) -> Result<()> {
        let n = self.samples.first().map_or(0, |s| s.q.len());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        for prefix in ["q", "qd", "a"] {
            header.extend((0..n).map(|i| format!("{prefix}{i}")));
        }
        header.push("V".into());
        out.write_record(&header).map_err(csv_error)?;
        for s in &self.samples {
            let mut row: Vec<String> = vec![fmt_f64(s.t)];
            row.extend(s.q.iter().chain(&s.qd).chain(&s.a).map(|v| fmt_f64(*v)));
            row.push(s.v.map(fmt_f64).unwrap_or_default());
            out.write_record(&row).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a table written by [`Trajectory::write_table`]. Events are not
    /// part of the table and come back empty.
    pub fn read_table(r: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(csv_error)?.clone();
        let n = header.iter().filter(|h| h.starts_with("qd")).count();
        if header.len() != 3 * n + 2 || header.get(0) != Some("t") || header.get(3 * n + 1) != Some("V") {
            return Err(Error::Config(format!(
                "trajectory header must be t,q..,qd..,a..,V; got {}",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(csv_error)?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("row {}: `{s}` is not a number", i + 1)))
            };
            let vals: Vec<f64> = row.iter().take(3 * n + 1).map(parse).collect::<Result<_>>()?;
            let v = match row.get(3 * n + 1).map(str::trim) {
                None | Some("") => None,
                Some(s) => Some(parse(s)?),
            };
            samples.push(Sample {
                t: vals[0],
                q: vals[1..1 + n].to_vec(),
                qd: vals[1 + n..1 + 2 * n].to_vec(),
                a: vals[1 + 2 * n..1 + 3 * n].to_vec(),
                v,
            });
        }
        if samples.is_empty() {
            return Err(Error::Config("trajectory table has no samples".into()));
        }
        let dt = if samples.len() > 1 { samples[1].t - samples[0].t } else { 0.0 };
        Ok(Trajectory {
            dt,
            samples,
            events: Events::default(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_table(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Trajectory::read_table(std::fs::File::open(path)?)
    }
}

/// Shortest representation that parses back to the same value.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("trajectory table: {e}"))
}

/// Integrates `policy` from `(q0, qd0)` until the goal is reached, the robot
/// touches an obstacle, or the horizon runs out.
pub fn rollout(
    policy: &dyn Policy,
    env: &Environment,
    q0: &[f64],
    qd0: &[f64],
    cfg: &RolloutConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if policy.dim() != env.dim() || q0.len() != env.dim() || qd0.len() != env.dim() {
        return Err(Error::Dimension(format!(
            "policy dim {}, environment dim {}, start ({}, {})",
            policy.dim(),
            env.dim(),
            q0.len(),
            qd0.len()
        )));
    }
    if !env.admits(q0) || qd0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("initial state {q0:?} lies outside the admissible region")));
    }
    let aux = env.aux();
    let n_steps = cfg.steps();
    let (mut q, mut qd) = (q0.to_vec(), qd0.to_vec());
    let mut samples = Vec::with_capacity(n_steps + 1);
    let mut events = Events::default();
    for k in 0..=n_steps {
        let t = k as f64 * cfg.dt;
        let at_time = |e: Error| Error::AtTime {
            time: t,
            source: Box::new(e),
        };
        let action = policy.act(&q, &qd, &aux).map_err(at_time)?;
        let next = if env.signed_distance(&q) <= 0.0 {
            events.collision = Some(t);
            None
        } else if env.goal_distance(&q) <= cfg.goal_tolerance {
            events.goal_reached = Some(t);
            None
        } else if k == n_steps {
            events.timed_out = true;
            None
        } else {
            Some(step_from(policy, &q, &qd, &action.a, &aux, cfg.dt, cfg.method).map_err(at_time)?)
        };
        samples.push(Sample {
            t,
            q: std::mem::take(&mut q),
            qd: std::mem::take(&mut qd),
            a: action.a,
            v: action.v,
        });
        match next {
            Some((q1, qd1)) => (q, qd) = (q1, qd1),
            None => break,
        }
    }
    Ok(Trajectory {
        dt: cfg.dt,
        samples,
        events,
    })
}

// ---------------------------------------------------------------------------
// Sampling

/// Ranges for random environments and start states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub robot: Robot,
    pub bounds: Bounds,
    pub goal_region: Bounds,
    pub obstacles: usize,
    pub obstacle_region: Bounds,
    /// `[min, max]` obstacle radius.
    pub radius: [f64; 2],
    /// `[min, max]` distance from the goal to an obstacle centre.
    pub obstacle_goal_distance: [f64; 2],
    /// Minimum gap between the goal and any obstacle surface.
    pub goal_clearance: f64,
    /// Minimum gap between obstacle surfaces.
    pub obstacle_gap: f64,
    /// `[min, max]` per configuration coordinate.
    pub start_region: Vec<[f64; 2]>,
    /// Start velocities are uniform in `[-start_speed, start_speed]` per coordinate.
    pub start_speed: f64,
    /// Minimum signed distance of the start body to every obstacle.
    pub start_clearance: f64,
    /// Minimum distance from the start task point to the goal.
    pub start_goal_distance: f64,
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.bounds.validate("workspace bounds")?;
        self.goal_region.validate("goal region")?;
        self.obstacle_region.validate("obstacle region")?;
        if !(self.radius[0] > 0.0 && self.radius[0] <= self.radius[1]) {
            return Err(Error::Config("obstacle radius range must be positive and ordered".into()));
        }
        if !(self.obstacle_goal_distance[0] <= self.obstacle_goal_distance[1]) {
            return Err(Error::Config("obstacle-goal distance range must be ordered".into()));
        }
        if self.start_region.len() != self.robot.dim() || self.start_region.iter().any(|r| !(r[0] <= r[1])) {
            return Err(Error::Config(format!(
                "start region needs {} ordered [min, max] ranges",
                self.robot.dim()
            )));
        }
        if !(self.start_speed >= 0.0) {
            return Err(Error::Config("start speed must be non-negative".into()));
        }
        Ok(())
    }

    pub fn aux_dim(&self) -> usize {
        Environment::aux_dim(self.obstacles)
    }

    pub fn environment_from_aux(&self, aux: &[f64]) -> Result<Environment> {
        Environment::from_aux(self.robot.clone(), self.bounds, aux)
    }
}

/// Rejection-samples an environment; gives up after
/// [`MAX_SAMPLING_ATTEMPTS`] tries.
pub fn sample_env(cfg: &SamplingConfig, rng: &mut impl Rng) -> Result<Environment> {
    cfg.validate()?;
    'attempt: for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let goal = cfg.goal_region.sample(rng);
        if !cfg.bounds.contains(&goal) {
            continue;
        }
        if let Robot::PlanarArm { lengths, .. } = &cfg.robot {
            if dist2(&goal, &[0.0, 0.0]) >= lengths.iter().sum::<f64>() {
                continue;
            }
        }
        let mut obstacles: Vec<Obstacle> = Vec::with_capacity(cfg.obstacles);
        for _ in 0..cfg.obstacles {
            let o = Obstacle {
                center: cfg.obstacle_region.sample(rng),
                radius: uniform(rng, cfg.radius[0], cfg.radius[1]),
            };
            let dg = dist2(&o.center, &goal);
            if dg < cfg.obstacle_goal_distance[0]
                || dg > cfg.obstacle_goal_distance[1]
                || dg - o.radius < cfg.goal_clearance
                || obstacles
                    .iter()
                    .any(|p| dist2(&p.center, &o.center) - p.radius - o.radius < cfg.obstacle_gap)
            {
                continue 'attempt;
            }
            obstacles.push(o);
        }
        return Environment::new(cfg.robot.clone(), cfg.bounds, goal, obstacles);
    }
    Err(Error::Config(format!(
        "no admissible environment after {MAX_SAMPLING_ATTEMPTS} attempts; the sampling ranges are infeasible"
    )))
}

/// Rejection-samples a start state outside every obstacle.
pub fn sample_start(env: &Environment, cfg: &SamplingConfig, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    if cfg.start_region.len() != env.dim() {
        return Err(Error::Dimension(format!(
            "start region has {} ranges, environment dim {}",
            cfg.start_region.len(),
            env.dim()
        )));
    }
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let q: Vec<f64> = cfg.start_region.iter().map(|r| uniform(rng, r[0], r[1])).collect();
        let qd: Vec<f64> = (0..env.dim())
            .map(|_| uniform(rng, -cfg.start_speed, cfg.start_speed))
            .collect();
        if env.admits(&q)
            && env.signed_distance(&q) >= cfg.start_clearance
            && env.goal_distance(&q) >= cfg.start_goal_distance
        {
            return Ok((q, qd));
        }
    }
    Err(Error::Config(format!(
        "no admissible start state after {MAX_SAMPLING_ATTEMPTS} attempts; the sampling ranges are infeasible"
    )))
}

// ---------------------------------------------------------------------------
// Datasets

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetCounts {
    pub envs: usize,
    pub traj_per_env: usize,
    pub points_per_traj: usize,
}

impl DatasetCounts {
    pub fn records(&self) -> usize {
        self.envs * self.traj_per_env * self.points_per_traj
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub records: usize,
    pub trajectories: usize,
    /// Expert rollouts that were discarded, by reason.
    pub skipped_collisions: usize,
    pub skipped_timeouts: usize,
    pub skipped_errors: usize,
    /// Environments replaced because the expert could not solve them.
    #[serde(default)]
    pub discarded_envs: usize,
    pub env_digests: Vec<String>,
}

impl GenSummary {
    fn absorb(&mut self, other: GenSummary) {
        self.records += other.records;
        self.trajectories += other.trajectories;
        self.skipped_collisions += other.skipped_collisions;
        self.skipped_timeouts += other.skipped_timeouts;
        self.skipped_errors += other.skipped_errors;
        self.discarded_envs += other.discarded_envs;
        self.env_digests.extend(other.env_digests);
    }
}

/// Indices of `n` temporally equidistant samples over the trajectory.
pub fn equidistant_indices(traj: &Trajectory, n: usize) -> Vec<usize> {
    let last = traj.samples.len().saturating_sub(1);
    let duration = traj.duration();
    (0..n)
        .map(|k| {
            let t = if n == 1 { 0.0 } else { k as f64 * duration / (n - 1) as f64 };
            ((t / traj.dt).round() as usize).min(last)
        })
        .collect()
}

/// RNG for environment `env` of a dataset seeded with `seed`.
pub fn env_rng(seed: u64, env: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(env as u64);
    rng
}

/// Expert rollouts allowed to fail in one environment before it is
/// replaced by a fresh one.
pub const ENV_FAILURE_LIMIT: usize = 50;
pub const MAX_ENV_RESAMPLES: usize = 20;

/// Records from `counts.traj_per_env` successful expert rollouts in `env`,
/// or `None` once [`ENV_FAILURE_LIMIT`] rollouts have failed.
#[allow(clippy::too_many_arguments)]
fn demonstrations(
    expert: &dyn Policy,
    env: &Environment,
    e: usize,
    sampling: &SamplingConfig,
    counts: &DatasetCounts,
    split: Split,
    rollout_cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(Vec<Record>, GenSummary)>> {
    let aux = env.aux();
    let mut summary = GenSummary {
        env_digests: vec![env.digest()],
        ..GenSummary::default()
    };
    let mut records = Vec::new();
    while summary.trajectories < counts.traj_per_env {
        let failures = summary.skipped_collisions + summary.skipped_timeouts + summary.skipped_errors;
        if failures >= ENV_FAILURE_LIMIT {
            return Ok(None);
        }
        let (q0, qd0) = sample_start(env, sampling, rng)?;
        let traj = match rollout(expert, env, &q0, &qd0, rollout_cfg) {
            Ok(t) => t,
            Err(err) => {
                log::warn!("environment {e}: expert rollout failed: {err}");
                summary.skipped_errors += 1;
                continue;
            }
        };
        match traj.outcome() {
            Outcome::Collision => {
                log::warn!("environment {e}: expert collided; start skipped");
                summary.skipped_collisions += 1;
                continue;
            }
            Outcome::Timeout => {
                log::debug!("environment {e}: expert timed out; start skipped");
                summary.skipped_timeouts += 1;
                continue;
            }
            Outcome::Goal => {}
        }
        for i in equidistant_indices(&traj, counts.points_per_traj) {
            let s = &traj.samples[i];
            records.push(Record {
                q: s.q.clone(),
                qd: s.qd.clone(),
                aux: aux.clone(),
                a_expert: s.a.clone(),
                env: e,
                traj: summary.trajectories,
                t: s.t,
                split,
            });
        }
        summary.trajectories += 1;
    }
    summary.records = records.len();
    Ok(Some((records, summary)))
}

/// Rolls the expert out from random starts in random environments and keeps
/// equidistant samples of every rollout that reaches the goal. Failed expert
/// rollouts are skipped, counted, and replaced by a fresh start; an
/// environment where the expert keeps failing is replaced as a whole.
pub fn gen_dataset(
    expert: &dyn Policy,
    sampling: &SamplingConfig,
    counts: &DatasetCounts,
    split: Split,
    rollout_cfg: &RolloutConfig,
    seed: u64,
) -> Result<(Dataset, GenSummary)> {
    sampling.validate()?;
    rollout_cfg.validate()?;
    if counts.points_per_traj == 0 {
        return Err(Error::Config("points_per_traj must be at least 1".into()));
    }
    let per_env: Vec<Result<(Vec<Record>, GenSummary)>> = (0..counts.envs)
        .into_par_iter()
        .map(|e| {
            let mut rng = env_rng(seed, e);
            let mut discarded = 0;
            loop {
                let env = sample_env(sampling, &mut rng)?;
                match demonstrations(expert, &env, e, sampling, counts, split, rollout_cfg, &mut rng)? {
                    Some((records, mut summary)) => {
                        summary.discarded_envs = discarded;
                        return Ok((records, summary));
                    }
                    None => {
                        discarded += 1;
                        log::warn!("environment {e}: expert failed {ENV_FAILURE_LIMIT} times; environment resampled");
                        if discarded >= MAX_ENV_RESAMPLES {
                            return Err(Error::Config(format!(
                                "environment {e}: expert failed in {MAX_ENV_RESAMPLES} sampled environments"
                            )));
                        }
                    }
                }
            }
        })
        .collect();
    let mut records = Vec::with_capacity(counts.records());
    let mut summary = GenSummary::default();
    for r in per_env {
        let (recs, s) = r?;
        records.extend(recs);
        summary.absorb(s);
    }
    Ok((Dataset::new(records)?, summary))
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub time_to_goal: f64,
    pub conf_length: f64,
    pub end_eff_length: f64,
    pub goal_distance: f64,
    pub collided: bool,
}

/// Path-length and goal metrics of one rollout. `time_to_goal` is the
/// rollout duration when the goal was not reached.
pub fn eval_metrics(traj: &Trajectory, env: &Environment) -> Result<Metrics> {
    let last = traj
        .samples
        .last()
        .ok_or_else(|| Error::Config("empty trajectory".into()))?;
    if last.q.len() != env.dim() {
        return Err(Error::Dimension(format!(
            "trajectory has dim {}, environment {}",
            last.q.len(),
            env.dim()
        )));
    }
    let mut conf = 0.0;
    let mut ee = 0.0;
    for w in traj.samples.windows(2) {
        conf += w[0].q.iter().zip(&w[1].q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        ee += dist2(&env.robot.task_point(&w[0].q), &env.robot.task_point(&w[1].q));
    }
    Ok(Metrics {
        time_to_goal: traj.events.goal_reached.unwrap_or(last.t),
        conf_length: conf,
        end_eff_length: ee,
        goal_distance: env.goal_distance(&last.q),
        collided: traj.events.collision.is_some(),
    })
}

/// Records at `t = 0`, one per test trajectory, in dataset order.
pub fn initial_states(test: &Dataset) -> Vec<&Record> {
    test.records.iter().filter(|r| r.t == 0.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineEval {
    pub online_loss: f64,
    pub rollouts: usize,
    pub completed: usize,
    pub collided: usize,
    pub timed_out: usize,
    pub metrics: Vec<Metrics>,
    /// Largest Lyapunov increment over all rollouts, if the policy reports one.
    pub max_v_increment: Option<f64>,
}

impl OnlineEval {
    pub fn completion_rate(&self) -> f64 {
        self.completed as f64 / self.rollouts.max(1) as f64
    }

    pub fn collision_rate(&self) -> f64 {
        self.collided as f64 / self.rollouts.max(1) as f64
    }

    pub fn timeout_rate(&self) -> f64 {
        self.timed_out as f64 / self.rollouts.max(1) as f64
    }
}

/// Rolls `learner` out from every test initial state and compares its
/// actions with the expert's at the visited states every
/// [`ONLINE_LOSS_INTERVAL`] seconds.
pub fn evaluate_online(
    learner: &dyn Policy,
    expert: &dyn Policy,
    test: &Dataset,
    sampling: &SamplingConfig,
    cfg: &RolloutConfig,
) -> Result<(OnlineEval, Vec<(Environment, Trajectory)>)> {
    cfg.validate()?;
    let starts = initial_states(test);
    if starts.is_empty() {
        return Err(Error::Config("test dataset has no initial states (records at t = 0)".into()));
    }
    let stride = ((ONLINE_LOSS_INTERVAL / cfg.dt).round() as usize).max(1);
    let runs: Vec<Result<(f64, usize, Environment, Trajectory)>> = starts
        .par_iter()
        .map(|r| {
            let env = sampling.environment_from_aux(&r.aux)?;
            let traj = rollout(learner, &env, &r.q, &r.qd, cfg)?;
            let mut loss = 0.0;
            let mut probes = 0;
            for s in traj.samples.iter().step_by(stride) {
                let a_exp = expert.act(&s.q, &s.qd, &r.aux).map_err(|e| Error::AtTime {
                    time: s.t,
                    source: Box::new(e),
                })?;
                loss += loss_mse(&s.a, &a_exp.a)?;
                probes += 1;
            }
            Ok((loss, probes, env, traj))
        })
        .collect();
    let mut eval = OnlineEval {
        online_loss: 0.0,
        rollouts: 0,
        completed: 0,
        collided: 0,
        timed_out: 0,
        metrics: Vec::new(),
        max_v_increment: None,
    };
    let (mut total, mut probes) = (0.0, 0usize);
    let mut out = Vec::with_capacity(runs.len());
    for run in runs {
        let (loss, n, env, traj) = run?;
        total += loss;
        probes += n;
        eval.rollouts += 1;
        match traj.outcome() {
            Outcome::Goal => eval.completed += 1,
            Outcome::Collision => eval.collided += 1,
            Outcome::Timeout => eval.timed_out += 1,
        }
        eval.metrics.push(eval_metrics(&traj, &env)?);
        if let Some(inc) = traj.max_v_increment() {
            eval.max_v_increment = Some(eval.max_v_increment.map_or(inc, |m: f64| m.max(inc)));
        }
        out.push((env, traj));
    }
    eval.online_loss = total / probes as f64;
    Ok((eval, out))
}

pub fn online_loss(
    learner: &dyn Policy,
    expert: &dyn Policy,
    test: &Dataset,
    sampling: &SamplingConfig,
    cfg: &RolloutConfig,
) -> Result<f64> {
    Ok(evaluate_online(learner, expert, test, sampling, cfg)?.0.online_loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane() -> Bounds {
        Bounds {
            min: [-5.0, -5.0],
            max: [5.0, 5.0],
        }
    }

    fn env_with(obstacles: Vec<Obstacle>) -> Environment {
        Environment::new(Robot::Point2d, plane(), [1.0, 0.0], obstacles).unwrap()
    }

    #[test]
    fn zero_policy_euler_step() {
        let p = ZeroPolicy { dim: 2 };
        let (q, qd) = integrate_step(&p, &[1.0, 2.0], &[0.5, -1.0], &[], 0.1, Method::Euler).unwrap();
        assert_eq!(q, vec![1.05, 1.9]);
        assert_eq!(qd, vec![0.5, -1.0]);
    }

    #[test]
    fn start_at_goal_finishes_immediately() {
        let env = env_with(vec![]);
        let traj = rollout(&ZeroPolicy { dim: 2 }, &env, &[1.0, 0.0], &[0.0, 0.0], &RolloutConfig::default()).unwrap();
        assert_eq!(traj.events.goal_reached, Some(0.0));
        assert_eq!(traj.samples.len(), 1);
    }

    #[test]
    fn zero_policy_from_rest_times_out() {
        let env = env_with(vec![]);
        let cfg = RolloutConfig {
            horizon: 1.0,
            ..RolloutConfig::default()
        };
        let traj = rollout(&ZeroPolicy { dim: 2 }, &env, &[-2.0, 3.0], &[0.0, 0.0], &cfg).unwrap();
        assert!(traj.events.timed_out);
        assert_eq!(traj.samples.len(), 101);
        assert!(traj.samples.iter().all(|s| s.q == vec![-2.0, 3.0]));
    }

    #[test]
    fn aux_round_trip() {
        let env = env_with(vec![
            Obstacle {
                center: [0.5, -1.0],
                radius: 0.3,
            },
            Obstacle {
                center: [-2.0, 2.0],
                radius: 0.7,
            },
        ]);
        let back = Environment::from_aux(Robot::Point2d, plane(), &env.aux()).unwrap();
        assert_eq!(back, env);
        assert!(Environment::from_aux(Robot::Point2d, plane(), &[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn arm_distance_uses_links() {
        let robot = Robot::PlanarArm {
            lengths: vec![1.0, 1.0],
            joint_lower: vec![-3.0, -3.0],
            joint_upper: vec![3.0, 3.0],
        };
        let env = Environment::new(
            robot,
            plane(),
            [0.0, 1.5],
            vec![Obstacle {
                center: [1.0, 0.5],
                radius: 0.2,
            }],
        )
        .unwrap();
        // Straight arm along x passes 0.5 below the obstacle centre.
        assert!((env.signed_distance(&[0.0, 0.0]) - 0.3).abs() < 1e-12);
        assert!((env.goal_distance(&[0.0, 0.0]) - (4.0f64 + 2.25).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn equidistant_indices_cover_the_rollout() {
        let traj = Trajectory {
            dt: 0.1,
            samples: (0..=20)
                .map(|k| Sample {
                    t: k as f64 * 0.1,
                    q: vec![0.0],
                    qd: vec![0.0],
                    a: vec![0.0],
                    v: None,
                })
                .collect(),
            events: Events::default(),
        };
        assert_eq!(equidistant_indices(&traj, 1), vec![0]);
        assert_eq!(equidistant_indices(&traj, 5), vec![0, 5, 10, 15, 20]);
    }

    #[test]
    fn table_round_trip() {
        let traj = Trajectory {
            dt: 0.5,
            samples: vec![
                Sample {
                    t: 0.0,
                    q: vec![1.0, 2.0],
                    qd: vec![0.1, 0.2],
                    a: vec![-1.0, 0.3],
                    v: Some(2.5),
                },
                Sample {
                    t: 0.5,
                    q: vec![1.1, 2.1],
                    qd: vec![0.0, 0.1],
                    a: vec![-0.5, 1e-17],
                    v: Some(2.25),
                },
            ],
            events: Events::default(),
        };
        let mut buf = Vec::new();
        traj.write_table(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,q0,q1,qd0,qd1,a0,a1,V\n"));
        assert_eq!(Trajectory::read_table(buf.as_slice()).unwrap(), traj);
        assert!(Trajectory::read_table("t,q0,qd0,a0,V\n".as_bytes()).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!("rk4".parse::<Method>().unwrap(), Method::Rk4);
        assert!("midpoint".parse::<Method>().is_err());
    }
}
