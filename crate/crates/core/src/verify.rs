//! Property suites behind `rmpfusion verify`, plus the random-tree generator
//! and the unweighted reference pullback they rely on.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fixtures;
use crate::gds::{AttractorGains, BarrierGains, LeafSpec, DEFAULT_METRIC_EPS};
use crate::learn::{batch_loss, grad_params, Record, RmpLearner, Split};
use crate::numerics::{finite_diff_grad, pseudo_inverse, tr_matvec, Matrix, DEFAULT_PINV_TOL};
use crate::sim::{env_rng, integrate_step, sample_env, Method, Policy, TreePolicy};
use crate::taskmaps::TaskMap;
use crate::tree::{EdgeSpec, NodeSpec, Tree, TreeSpec, SCHEMA_VERSION};
use crate::weights::{Activation, WeightSpec};

/// Largest tolerated per-step increase of the root Lyapunov value.
pub fn lyapunov_tolerance(dt: f64) -> f64 {
    10.0 * dt.powi(3) + 1e-9
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    /// Every edge weight is the constant 1.
    Unit,
    /// A mix of constants, radial bumps and small networks.
    Random,
}

#[derive(Clone, Copy, Debug)]
pub struct RandomTreeOptions {
    pub max_depth: usize,
    pub max_dim: usize,
    pub max_children: usize,
    pub weights: WeightMode,
}

impl Default for RandomTreeOptions {
    fn default() -> Self {
        RandomTreeOptions {
            max_depth: 3,
            max_dim: 4,
            max_children: 3,
            weights: WeightMode::Unit,
        }
    }
}

fn u(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| u(rng, lo, hi)).collect()
}

fn random_map(rng: &mut impl Rng, n: usize, max_dim: usize) -> (TaskMap, usize) {
    loop {
        match rng.random_range(0..5) {
            0 => return (TaskMap::identity(n), n),
            1 => {
                let m = rng.random_range(1..=max_dim);
                let a = Matrix::new(m, n, random_vec(rng, m * n, -1.0, 1.0)).expect("finite entries");
                let b = random_vec(rng, m, -0.5, 0.5);
                return (TaskMap::affine(a, b).expect("consistent sizes"), m);
            }
            2 if max_dim >= 2 => {
                let lengths = random_vec(rng, n, 0.5, 1.5);
                let link = rng.random_range(0..n);
                let fraction = u(rng, 0.3, 1.0);
                return (TaskMap::planar_fk(&lengths, link, fraction).expect("valid arm"), 2);
            }
            3 => {
                let center = random_vec(rng, n, -3.0, 3.0);
                return (TaskMap::distance_to_point(&center, u(rng, 0.0, 0.5)), 1);
            }
            4 => return (TaskMap::goal_offset(&random_vec(rng, n, -1.0, 1.0)), n),
            _ => {}
        }
    }
}

fn random_leaf(rng: &mut impl Rng, dim: usize) -> LeafSpec {
    let barrier = |rng: &mut ChaCha8Rng| BarrierGains {
        scale: u(rng, 0.5, 3.0),
        length_scale: u(rng, 0.3, 1.0),
        damping: u(rng, 0.1, 1.0),
        barrier: Some(u(rng, 0.2, 2.0)),
        eps: DEFAULT_METRIC_EPS,
    };
    let mut r = ChaCha8Rng::seed_from_u64(rng.random());
    let choices = if dim == 1 { 6 } else { 4 };
    match r.random_range(0..choices) {
        0 => LeafSpec::Spring {
            dim,
            mass: u(&mut r, 0.5, 2.0),
            stiffness: u(&mut r, 0.5, 3.0),
            damping: u(&mut r, 0.1, 2.0),
        },
        1 => LeafSpec::RadialMetric {
            dim,
            base: u(&mut r, 0.5, 2.0),
            curvature: u(&mut r, 0.0, 1.0),
            stiffness: u(&mut r, 0.5, 3.0),
            damping: u(&mut r, 0.1, 2.0),
        },
        2 => LeafSpec::Damper {
            dim,
            damping: u(&mut r, 0.1, 2.0),
            eps: 1e-3,
        },
        3 => LeafSpec::Attractor(AttractorGains {
            dim,
            stiffness: u(&mut r, 0.5, 5.0),
            damping: u(&mut r, 0.5, 3.0),
            metric_scale: u(&mut r, 0.5, 2.0),
            softness: u(&mut r, 0.5, 3.0),
        }),
        4 => LeafSpec::Obstacle(barrier(&mut r)),
        _ => LeafSpec::JointLimit(barrier(&mut r)),
    }
}

fn random_weight(rng: &mut impl Rng, parent_dim: usize, mode: WeightMode) -> WeightSpec {
    if mode == WeightMode::Unit {
        return WeightSpec::constant(1.0);
    }
    match rng.random_range(0..4) {
        0 => WeightSpec::constant(u(rng, 0.2, 2.0)),
        1 => WeightSpec::Radial {
            center: random_vec(rng, parent_dim, -1.0, 1.0).into_iter().map(Into::into).collect(),
            radius: None,
            base: u(rng, 0.2, 1.0),
            gain: u(rng, 0.0, 2.0),
            length_scale: u(rng, 0.5, 2.0),
        },
        _ => {
            let layers = rng.random_range(1..=2);
            let hidden: Vec<usize> = (0..layers).map(|_| rng.random_range(2..=5)).collect();
            WeightSpec::Mlp {
                hidden,
                activation: if rng.random() { Activation::Tanh } else { Activation::Elu },
                aux_inputs: Vec::new(),
                offset: Vec::new(),
                distance_input: false,
                share: None,
                output_scale: 1.0,
                output_bias: u(rng, -0.5, 0.5),
            }
        }
    }
}

/// A random tree. The root always carries a unit-weight spring leaf so the
/// root inertia is well conditioned.
pub fn random_tree(rng: &mut impl Rng, opts: &RandomTreeOptions) -> TreeSpec {
    let root_dim = rng.random_range(1..=opts.max_dim);
    let mut nodes = vec![NodeSpec {
        id: "root".into(),
        dim: root_dim,
        children: vec!["anchor".into()],
    }];
    let mut edges = vec![EdgeSpec {
        child: "anchor".into(),
        map: TaskMap::identity(root_dim),
        weight: WeightSpec::constant(1.0),
    }];
    let mut leaves = std::collections::BTreeMap::new();
    leaves.insert(
        "anchor".to_string(),
        LeafSpec::Spring {
            dim: root_dim,
            mass: 1.0,
            stiffness: 1.0,
            damping: 0.5,
        },
    );
    nodes.push(NodeSpec {
        id: "anchor".into(),
        dim: root_dim,
        children: vec![],
    });
    // (parent index, depth of the parent)
    let mut stack = vec![(0usize, 0usize)];
    while let Some((parent, depth)) = stack.pop() {
        let n_children = rng.random_range(1..=opts.max_children);
        for _ in 0..n_children {
            let id = format!("n{}", nodes.len());
            let parent_dim = nodes[parent].dim;
            let (map, dim) = random_map(rng, parent_dim, opts.max_dim);
            let weight = random_weight(rng, parent_dim, opts.weights);
            nodes[parent].children.push(id.clone());
            edges.push(EdgeSpec {
                child: id.clone(),
                map,
                weight,
            });
            nodes.push(NodeSpec {
                id: id.clone(),
                dim,
                children: vec![],
            });
            let idx = nodes.len() - 1;
            if depth + 1 < opts.max_depth && rng.random_range(0..3) > 0 {
                stack.push((idx, depth + 1));
            } else {
                leaves.insert(id, random_leaf(rng, dim));
            }
        }
    }
    TreeSpec {
        schema_version: SCHEMA_VERSION,
        name: "random".into(),
        root_dim,
        aux_dim: 0,
        nodes,
        edges,
        leaves,
    }
}

/// Root acceleration of the plain unweighted pullback
/// `f = Σ Jᵀ(fᵢ − Mᵢ J̇ẋ)`, `M = Σ JᵀMᵢJ`; edge weights are ignored.
pub fn rmpflow_reference(spec: &TreeSpec, q: &[f64], qd: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
    let by_id: HashMap<&str, &NodeSpec> = spec.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    let edge_of: HashMap<&str, &EdgeSpec> = spec.edges.iter().map(|e| (e.child.as_str(), e)).collect();
    let root = spec
        .nodes
        .iter()
        .find(|n| !edge_of.contains_key(n.id.as_str()))
        .ok_or_else(|| Error::Config("tree has no root".into()))?;

    fn node_rmp(
        id: &str,
        x: &[f64],
        xd: &[f64],
        aux: &[f64],
        spec: &TreeSpec,
        by_id: &HashMap<&str, &NodeSpec>,
        edge_of: &HashMap<&str, &EdgeSpec>,
    ) -> Result<(Vec<f64>, Matrix)> {
        if let Some(leaf) = spec.leaves.get(id) {
            let out = leaf.evaluate(x, xd)?;
            return Ok((out.f, out.m));
        }
        let n = x.len();
        let mut f = vec![0.0; n];
        let mut m = Matrix::zeros(n, n);
        for child in &by_id[id].children {
            let e = edge_of[child.as_str()];
            let me = e.map.evaluate(x, xd, aux)?;
            let (fc, mc) = node_rmp(child, &me.y, &me.yd, aux, spec, by_id, edge_of)?;
            let corr = mc.matvec(&me.jdot_xd)?;
            let rhs: Vec<f64> = fc.iter().zip(&corr).map(|(a, b)| a - b).collect();
            for (fi, v) in f.iter_mut().zip(tr_matvec(&me.j, &rhs)?) {
                *fi += v;
            }
            m = m.add(&mc.congruence(&me.j)?)?;
        }
        Ok((f, m))
    }

    let (f, m) = node_rmp(&root.id, q, qd, aux, spec, &by_id, &edge_of)?;
    pseudo_inverse(&m, DEFAULT_PINV_TOL)?.matvec(&f)
}

// ---------------------------------------------------------------------------
// Suites

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Reduction,
    Stability,
    Gradients,
    Lemma2,
    Energy,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduction" => Ok(Suite::Reduction),
            "stability" => Ok(Suite::Stability),
            "gradients" => Ok(Suite::Gradients),
            "lemma2" => Ok(Suite::Lemma2),
            "energy" => Ok(Suite::Energy),
            _ => Err(Error::Config(format!(
                "unknown suite `{s}` (expected reduction, stability, gradients, lemma2 or energy)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    pub checks: usize,
    /// Worst observed value of the suite's error measure.
    pub worst: f64,
    pub tolerance: f64,
    /// Serialized failing cases, at most [`MAX_COUNTEREXAMPLES`].
    pub counterexamples: Vec<serde_json::Value>,
}

pub const MAX_COUNTEREXAMPLES: usize = 5;

struct Collector {
    report: SuiteReport,
}

impl Collector {
    fn new(suite: Suite, seed: u64, tolerance: f64) -> Self {
        Collector {
            report: SuiteReport {
                suite,
                seed,
                passed: true,
                checks: 0,
                worst: 0.0,
                tolerance,
                counterexamples: Vec::new(),
            },
        }
    }

    fn check(&mut self, err: f64, case: impl FnOnce() -> serde_json::Value) {
        let r = &mut self.report;
        r.checks += 1;
        if err.is_nan() || err > r.worst {
            r.worst = err;
        }
        if !(err <= r.tolerance) {
            r.passed = false;
            if r.counterexamples.len() < MAX_COUNTEREXAMPLES {
                r.counterexamples.push(case());
            }
        }
    }

    fn fail(&mut self, case: serde_json::Value) {
        self.report.checks += 1;
        self.report.passed = false;
        if self.report.counterexamples.len() < MAX_COUNTEREXAMPLES {
            self.report.counterexamples.push(case);
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_state(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    (random_vec(rng, n, -1.5, 1.5), random_vec(rng, n, -1.0, 1.0))
}

/// A tree from the shipped fixtures with parameters and an aux state that
/// matches its experiment.
struct FixtureCase {
    name: String,
    tree: Tree,
    params: Vec<f64>,
    aux: Vec<f64>,
}

fn fixture_cases(seed: u64) -> Result<Vec<FixtureCase>> {
    let mut out = Vec::new();
    for name in fixtures::TREES {
        let tree = Tree::new(fixtures::tree_spec(name)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = tree.init_params(&mut rng);
        let experiment = name.split('.').next().unwrap();
        let aux = match fixtures::experiment_config(experiment) {
            Ok(cfg) => sample_env(&cfg.sampling, &mut env_rng(seed, 0))?.aux(),
            Err(_) => vec![0.0; tree.aux_dim()],
        };
        out.push(FixtureCase {
            name: name.to_string(),
            tree,
            params,
            aux,
        });
    }
    Ok(out)
}

/// Unit-weight trees agree with the reference pullback.
pub fn reduction(seed: u64, trees: usize) -> Result<SuiteReport> {
    let mut c = Collector::new(Suite::Reduction, seed, 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = RandomTreeOptions::default();
    for _ in 0..trees {
        let spec = random_tree(&mut rng, &opts);
        let tree = Tree::new(spec.clone())?;
        let (q, qd) = random_state(&mut rng, spec.root_dim);
        let reference = rmpflow_reference(&spec, &q, &qd, &[])?;
        let a = tree.evaluate_policy(&q, &qd, &[], &[])?.a;
        let err = max_abs_diff(&a, &reference);
        c.check(err, || json!({"tree": spec, "q": q, "qd": qd, "a": a, "reference": reference}));
    }
    for case in fixture_cases(seed)? {
        let spec = case.tree.spec().reduce_to_rmpflow();
        let tree = Tree::new(spec.clone())?;
        for _ in 0..10 {
            let (q, qd) = random_state(&mut rng, spec.root_dim);
            let reference = rmpflow_reference(&spec, &q, &qd, &case.aux)?;
            let a = tree.evaluate_policy(&q, &qd, &case.aux, &[])?.a;
            let err = max_abs_diff(&a, &reference);
            c.check(err, || json!({"fixture": case.name, "q": q, "qd": qd, "aux": case.aux, "a": a, "reference": reference}));
        }
    }
    Ok(c.report)
}

/// The two-step expansion reproduces the root RMP of the original tree.
pub fn lemma2(seed: u64, states: usize) -> Result<SuiteReport> {
    let mut c = Collector::new(Suite::Lemma2, seed, 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for case in fixture_cases(seed)? {
        let expanded = Tree::new(case.tree.spec().decompose_two_step())?;
        for _ in 0..states {
            let (q, qd) = random_state(&mut rng, case.tree.root_dim());
            let a = case.tree.evaluate_policy(&q, &qd, &case.aux, &case.params)?;
            let b = expanded.evaluate_policy(&q, &qd, &case.aux, &case.params)?;
            let scale = |v: f64| v / 1f64.max(a.root.m.max_abs());
            let err = max_abs_diff(&a.a, &b.a)
                .max(max_abs_diff(&a.root.f, &b.root.f))
                .max(scale(max_abs_diff(a.root.m.as_slice(), b.root.m.as_slice())));
            c.check(err, || json!({"fixture": case.name, "q": q, "qd": qd, "aux": case.aux, "a": a.a, "expanded": b.a}));
        }
    }
    Ok(c.report)
}

/// `grad_params` agrees with central differences of the batch loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    pub components: usize,
    pub within_relative: usize,
    pub max_abs_error: f64,
}

impl GradientStats {
    pub fn fraction_within(&self) -> f64 {
        self.within_relative as f64 / self.components.max(1) as f64
    }
}

pub const GRADIENT_FD_STEP: f64 = 1e-5;
pub const GRADIENT_REL_TOL: f64 = 1e-4;
pub const GRADIENT_ABS_TOL: f64 = 1e-3;
pub const GRADIENT_MIN_FRACTION: f64 = 0.95;

/// Compares analytic and finite-difference gradients on `trees` random
/// trees with learnable weights.
pub fn gradient_stats(seed: u64, trees: usize) -> Result<(GradientStats, Vec<serde_json::Value>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = RandomTreeOptions {
        weights: WeightMode::Random,
        ..RandomTreeOptions::default()
    };
    let mut stats = GradientStats::default();
    let mut bad = Vec::new();
    let mut made = 0;
    while made < trees {
        let spec = random_tree(&mut rng, &opts);
        let tree = Tree::new(spec.clone())?;
        if tree.n_params() == 0 {
            continue;
        }
        made += 1;
        let learner = RmpLearner::new(tree);
        let params = learner.tree.init_params(&mut rng);
        let records: Vec<Record> = (0..3)
            .map(|i| {
                let (q, qd) = random_state(&mut rng, spec.root_dim);
                Record {
                    a_expert: random_vec(&mut rng, spec.root_dim, -2.0, 2.0),
                    q,
                    qd,
                    aux: vec![],
                    env: 0,
                    traj: i,
                    t: 0.0,
                    split: Split::Train,
                }
            })
            .collect();
        let (_, g) = grad_params(&learner, &records, &params)?;
        let fd = finite_diff_grad(
            |p| batch_loss(&learner, &records, p).unwrap_or(f64::NAN),
            &params,
            GRADIENT_FD_STEP,
        )?;
        for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
            let abs = (a - b).abs();
            let rel = abs / b.abs().max(a.abs()).max(f64::MIN_POSITIVE);
            stats.components += 1;
            if rel <= GRADIENT_REL_TOL || abs == 0.0 {
                stats.within_relative += 1;
            } else if abs > GRADIENT_ABS_TOL && bad.len() < MAX_COUNTEREXAMPLES {
                bad.push(json!({"tree": spec, "param": i, "analytic": a, "finite_difference": b}));
            }
            if !(abs <= stats.max_abs_error) {
                stats.max_abs_error = abs;
            }
        }
    }
    Ok((stats, bad))
}

pub fn gradients(seed: u64, trees: usize) -> Result<SuiteReport> {
    let (stats, bad) = gradient_stats(seed, trees)?;
    let passed = stats.fraction_within() >= GRADIENT_MIN_FRACTION && stats.max_abs_error <= GRADIENT_ABS_TOL;
    Ok(SuiteReport {
        suite: Suite::Gradients,
        seed,
        passed,
        checks: stats.components,
        worst: stats.max_abs_error,
        tolerance: GRADIENT_ABS_TOL,
        counterexamples: if passed {
            Vec::new()
        } else {
            let mut v = vec![json!({"fraction_within_relative": stats.fraction_within()})];
            v.extend(bad);
            v
        },
    })
}

/// Integrates `policy` for `steps` steps and returns the root Lyapunov values.
fn lyapunov_trace(
    policy: &TreePolicy,
    q0: &[f64],
    qd0: &[f64],
    aux: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let (mut q, mut qd) = (q0.to_vec(), qd0.to_vec());
    let mut v = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let act = policy.act(&q, &qd, aux).map_err(|e| Error::AtTime {
            time: k as f64 * dt,
            source: Box::new(e),
        })?;
        v.push(act.v.expect("tree policies report V"));
        if k < steps {
            (q, qd) = integrate_step(policy, &q, &qd, aux, dt, Method::Rk4)?;
        }
    }
    Ok(v)
}

/// Root Lyapunov values never increase by more than the discretisation
/// allowance, and evaluation never breaks the positivity contract. With
/// `tree` given, that tree is checked with random parameters from random
/// states; otherwise every shipped fixture is.
pub fn stability(seed: u64, tree: Option<TreeSpec>) -> Result<SuiteReport> {
    let dt = 1e-2;
    let steps = 200;
    let mut c = Collector::new(Suite::Stability, seed, lyapunov_tolerance(dt));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = match tree {
        Some(spec) => {
            let tree = Tree::new(spec)?;
            let params = tree.init_params(&mut rng);
            let aux = random_vec(&mut rng, tree.aux_dim(), -1.0, 1.0);
            vec![FixtureCase {
                name: tree.name().to_string(),
                tree,
                params,
                aux,
            }]
        }
        None => fixture_cases(seed)?,
    };
    for case in cases {
        let policy = TreePolicy::new(case.tree.clone(), case.params.clone())?;
        for _ in 0..3 {
            let (q, qd) = random_state(&mut rng, case.tree.root_dim());
            match lyapunov_trace(&policy, &q, &qd, &case.aux, dt, steps) {
                Ok(v) => {
                    let inc = v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
                    c.check(inc.max(0.0), || {
                        json!({"tree": case.name, "q0": q, "qd0": qd, "aux": case.aux, "max_increment": inc})
                    });
                }
                Err(e) => c.fail(json!({
                    "tree": case.name,
                    "spec": case.tree.spec(),
                    "q0": q,
                    "qd0": qd,
                    "aux": case.aux,
                    "contract_violation": e.is_contract_violation(),
                    "error": e.to_string(),
                })),
            }
        }
    }
    Ok(c.report)
}

/// Without damping and with constant weights the root energy is conserved.
pub fn energy(seed: u64) -> Result<SuiteReport> {
    let dt = 1e-3;
    let mut c = Collector::new(Suite::Energy, seed, 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = fixtures::tree_spec("ytree")?.reduce_to_rmpflow().undamped();
    let policy = TreePolicy::new(Tree::new(spec)?, Vec::new())?;
    for _ in 0..5 {
        let (q, qd) = random_state(&mut rng, 2);
        let v = lyapunov_trace(&policy, &q, &qd, &[], dt, 1000)?;
        let drift = (v[v.len() - 1] - v[0]).abs();
        c.check(drift, || json!({"q0": q, "qd0": qd, "v0": v[0], "v1": v[v.len() - 1]}));
    }
    Ok(c.report)
}

/// Runs `suite` with the sizes used by the command line.
pub fn run(suite: Suite, seed: u64, tree: Option<TreeSpec>) -> Result<SuiteReport> {
    match suite {
        Suite::Reduction => reduction(seed, 200),
        Suite::Stability => stability(seed, tree),
        Suite::Gradients => gradients(seed, 50),
        Suite::Lemma2 => lemma2(seed, 100),
        Suite::Energy => energy(seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_trees_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [WeightMode::Unit, WeightMode::Random] {
            for _ in 0..50 {
                let spec = random_tree(
                    &mut rng,
                    &RandomTreeOptions {
                        weights: mode,
                        ..RandomTreeOptions::default()
                    },
                );
                let tree = Tree::new(spec).unwrap();
                assert!(tree.root_dim() <= 4);
            }
        }
    }

    #[test]
    fn suite_names() {
        assert_eq!("lemma2".parse::<Suite>().unwrap(), Suite::Lemma2);
        assert!("speed".parse::<Suite>().is_err());
    }
}
