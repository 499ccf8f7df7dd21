//! Weighted RMP trees: description, pushforward, weighted pullback, resolve.
//!
//! A [`TreeSpec`] is the serializable description; [`Tree`] is the validated,
//! compiled form with nodes in topological order and a parameter layout for
//! the learnable edge weights.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gds::{LeafOutput, LeafSpec};
use crate::numerics::{is_psd, tr_matvec, Matrix, Real, DEFAULT_PINV_TOL};
use crate::taskmaps::TaskMap;
use crate::weights::WeightSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Smallest root-inertia eigenvalue below which a warning is logged.
pub const MIN_EIG_WARNING: f64 = 1e-9;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub dim: usize,
    #[serde(default)]
    pub children: Vec<String>,
}

/// The edge into `child` from its parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub child: String,
    pub map: TaskMap,
    pub weight: WeightSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub root_dim: usize,
    #[serde(default)]
    pub aux_dim: usize,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
    pub leaves: BTreeMap<String, LeafSpec>,
}

impl TreeSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree specs always serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("tree specs always serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Same topology, maps and leaves with every edge weight set to constant one.
    pub fn reduce_to_rmpflow(&self) -> TreeSpec {
        let mut out = self.clone();
        for e in &mut out.edges {
            e.weight = WeightSpec::constant(1.0);
        }
        out
    }

    /// Splits every edge `u → v` into `u → ṽ → v`: the first step is an identity
    /// map carrying the original weight, the second the original map with unit
    /// weight. Learnable weights keep their declaration order, so the expanded
    /// tree uses the same parameter vector.
    pub fn decompose_two_step(&self) -> TreeSpec {
        let parent_of: HashMap<&str, &NodeSpec> = self
            .nodes
            .iter()
            .flat_map(|n| n.children.iter().map(move |c| (c.as_str(), n)))
            .collect();
        let taken: std::collections::HashSet<&str> =
            self.nodes.iter().map(|n| n.id.as_str()).collect();
        let mut split_ids: HashMap<String, String> = HashMap::new();
        for e in &self.edges {
            let mut id = format!("{}~", e.child);
            while taken.contains(id.as_str()) {
                id.push('~');
            }
            split_ids.insert(e.child.clone(), id);
        }

        let mut nodes = Vec::with_capacity(self.nodes.len() + self.edges.len());
        for n in &self.nodes {
            nodes.push(NodeSpec {
                id: n.id.clone(),
                dim: n.dim,
                children: n
                    .children
                    .iter()
                    .map(|c| split_ids.get(c).cloned().unwrap_or_else(|| c.clone()))
                    .collect(),
            });
        }
        let mut edges = Vec::with_capacity(2 * self.edges.len());
        for e in &self.edges {
            let mid = split_ids[&e.child].clone();
            let parent_dim = parent_of
                .get(e.child.as_str())
                .map_or(e.map.in_dim(), |p| p.dim);
            nodes.push(NodeSpec {
                id: mid.clone(),
                dim: parent_dim,
                children: vec![e.child.clone()],
            });
            edges.push(EdgeSpec {
                child: mid,
                map: TaskMap::identity(parent_dim),
                weight: e.weight.clone(),
            });
            edges.push(EdgeSpec {
                child: e.child.clone(),
                map: e.map.clone(),
                weight: WeightSpec::constant(1.0),
            });
        }
        TreeSpec {
            schema_version: self.schema_version,
            name: format!("{}-two-step", self.name),
            root_dim: self.root_dim,
            aux_dim: self.aux_dim,
            nodes,
            edges,
            leaves: self.leaves.clone(),
        }
    }

    /// Same tree with every leaf's damping removed.
    pub fn undamped(&self) -> TreeSpec {
        let mut out = self.clone();
        for leaf in out.leaves.values_mut() {
            *leaf = leaf.undamped();
        }
        out
    }
}

/// Combined quantities at one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeOutput<S = f64> {
    pub f: Vec<S>,
    pub m: Matrix<S>,
    pub g: Matrix<S>,
    pub b: Matrix<S>,
    pub phi: S,
    pub l: S,
    pub v: S,
}

impl<S: Real> NodeOutput<S> {
    pub fn from_leaf(leaf: &LeafOutput) -> Self {
        NodeOutput {
            f: leaf.f.iter().map(|&v| S::constant(v)).collect(),
            m: leaf.m.lift(),
            g: leaf.g.lift(),
            b: leaf.b.lift(),
            phi: S::constant(leaf.phi),
            l: S::constant(leaf.l),
            v: S::constant(leaf.v),
        }
    }

    pub fn values(&self) -> NodeOutput<f64> {
        NodeOutput {
            f: self.f.iter().map(|v| v.value()).collect(),
            m: self.m.values(),
            g: self.g.values(),
            b: self.b.values(),
            phi: self.phi.value(),
            l: self.l.value(),
            v: self.v.value(),
        }
    }

    fn zeros(n: usize) -> Self {
        NodeOutput {
            f: vec![S::zero(); n],
            m: Matrix::zeros(n, n),
            g: Matrix::zeros(n, n),
            b: Matrix::zeros(n, n),
            phi: S::zero(),
            l: S::zero(),
            v: S::zero(),
        }
    }
}

/// One child's contribution to its parent's weighted pullback.
#[derive(Clone, Debug)]
pub struct ChildContribution<'a, S = f64> {
    pub out: &'a NodeOutput<S>,
    pub j: &'a Matrix,
    pub jdot_xd: &'a [f64],
    pub w: S,
    pub grad_w: &'a [S],
}

fn scale_by<S: Real>(v: S, w: S) -> S {
    match w.as_constant() {
        Some(1.0) => v,
        Some(c) => v * c,
        None => v * w,
    }
}

fn add_scaled<S: Real>(acc: &mut Matrix<S>, m: &Matrix<S>, w: S) {
    for i in 0..acc.rows() {
        for j in 0..acc.cols() {
            acc.set(i, j, acc.get(i, j) + scale_by(m.get(i, j), w));
        }
    }
}

/// Weighted pullback of child outputs into the parent coordinate `x`:
///
/// `f = Σ wᵢ Jᵢᵀ(fᵢ − Mᵢ J̇ᵢẋ) + hᵢ` with
/// `hᵢ = Lᵢ ∇ₓwᵢ − (ẋᵀ∇ₓwᵢ) JᵢᵀGᵢJᵢẋ`, and `M, G, B` the weighted
/// pulled-back matrices, `Φ, L, V` the weighted sums.
pub fn pullback_star<S: Real>(
    parent_x: &[f64],
    parent_xd: &[f64],
    children: &[ChildContribution<'_, S>],
) -> Result<NodeOutput<S>> {
    let n = parent_x.len();
    if parent_xd.len() != n {
        return Err(Error::Dimension("parent position and velocity differ in size".into()));
    }
    let mut out = NodeOutput::zeros(n);
    for (k, c) in children.iter().enumerate() {
        let wv = c.w.value();
        if !(wv >= 0.0) {
            return Err(Error::Contract(format!("child {k} has weight {wv}")));
        }
        let m = c.j.rows();
        if c.j.cols() != n || c.out.f.len() != m || c.jdot_xd.len() != m || c.grad_w.len() != n {
            return Err(Error::Dimension(format!(
                "child {k}: Jacobian {:?}, force {}, curvature {}, weight gradient {} against parent dim {n}",
                c.j.shape(),
                c.out.f.len(),
                c.jdot_xd.len(),
                c.grad_w.len()
            )));
        }
        // fᵢ − Mᵢ J̇ᵢẋ
        let corrected: Vec<S> = (0..m)
            .map(|r| {
                let mut acc = c.out.f[r];
                for (col, &jd) in c.jdot_xd.iter().enumerate() {
                    if jd != 0.0 {
                        acc = acc - c.out.m.get(r, col) * jd;
                    }
                }
                acc
            })
            .collect();
        let pulled = tr_matvec(c.j, &corrected)?;
        for (o, p) in out.f.iter_mut().zip(pulled) {
            *o = *o + scale_by(p, c.w);
        }
        add_scaled(&mut out.m, &c.out.m.congruence(c.j)?, c.w);
        let g_pulled = c.out.g.congruence(c.j)?;
        add_scaled(&mut out.b, &c.out.b.congruence(c.j)?, c.w);

        let varying = c.grad_w.iter().any(|g| g.as_constant() != Some(0.0));
        if varying {
            let g_xd = g_pulled.matvec(&parent_xd.iter().map(|&v| S::constant(v)).collect::<Vec<_>>())?;
            let rate = c
                .grad_w
                .iter()
                .zip(parent_xd)
                .fold(S::zero(), |acc, (&g, &v)| acc + g * v);
            for r in 0..n {
                out.f[r] = out.f[r] + c.out.l * c.grad_w[r] - rate * g_xd[r];
            }
        }
        add_scaled(&mut out.g, &g_pulled, c.w);
        out.phi = out.phi + scale_by(c.out.phi, c.w);
        out.l = out.l + scale_by(c.out.l, c.w);
        out.v = out.v + scale_by(c.out.v, c.w);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Relative eigenvalue cutoff of the pseudo-inverse in resolve.
    pub pinv_tol: f64,
    /// Tolerance of the positive-semidefiniteness check on the root inertia.
    pub psd_tol: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            pinv_tol: DEFAULT_PINV_TOL,
            psd_tol: 1e-9,
        }
    }
}

/// `a = M† f`, refusing indefinite inertia.
pub fn resolve<S: Real>(f: &[S], m: &Matrix<S>, opts: &EvalOptions) -> Result<Vec<S>> {
    let mv = m.values();
    if !is_psd(&mv, opts.psd_tol)? {
        return Err(Error::Contract(format!(
            "inertia is not positive semidefinite (min eigenvalue {:.3e})",
            mv.min_eigenvalue()?
        )));
    }
    S::pinv_solve(m, f, opts.pinv_tol)
}

#[derive(Clone, Debug)]
struct CompiledNode {
    id: String,
    dim: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    map: Option<TaskMap>,
    weight: Option<WeightSpec>,
    params: Range<usize>,
    leaf: Option<LeafSpec>,
}

/// Per-state quantities that do not depend on the weight parameters.
#[derive(Clone, Debug)]
pub struct Frame {
    pub aux: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub xd: Vec<Vec<f64>>,
    /// Jacobian and curvature of each node's incoming edge.
    pub j: Vec<Option<Matrix>>,
    pub jdot_xd: Vec<Option<Vec<f64>>>,
    pub leaves: Vec<Option<LeafOutput>>,
}

#[derive(Clone, Debug)]
pub struct PolicyEval {
    pub a: Vec<f64>,
    pub root: NodeOutput,
    /// Smallest eigenvalue of the root inertia.
    pub min_eig: f64,
}

#[derive(Clone, Debug)]
pub struct Tree {
    spec: TreeSpec,
    nodes: Vec<CompiledNode>,
    n_params: usize,
    digest: String,
}

impl Tree {
    pub fn new(spec: TreeSpec) -> Result<Self> {
        if spec.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "tree schema version {} is not supported (expected {SCHEMA_VERSION})",
                spec.schema_version
            )));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, n) in spec.nodes.iter().enumerate() {
            if n.dim == 0 {
                return Err(Error::Config(format!("node `{}` has dimension 0", n.id)));
            }
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate node id `{}`", n.id)));
            }
        }
        let mut parent: Vec<Option<usize>> = vec![None; spec.nodes.len()];
        for (i, n) in spec.nodes.iter().enumerate() {
            for c in &n.children {
                let &ci = index
                    .get(c.as_str())
                    .ok_or_else(|| Error::Config(format!("node `{}` lists unknown child `{c}`", n.id)))?;
                if parent[ci].replace(i).is_some() {
                    return Err(Error::Config(format!("node `{c}` has more than one parent")));
                }
            }
        }
        let roots: Vec<usize> = (0..spec.nodes.len()).filter(|&i| parent[i].is_none()).collect();
        let [root] = roots[..] else {
            return Err(Error::Config(format!(
                "a tree needs exactly one root, found {}",
                roots.len()
            )));
        };
        if spec.nodes[root].dim != spec.root_dim {
            return Err(Error::Dimension(format!(
                "root `{}` has dimension {} but root_dim is {}",
                spec.nodes[root].id, spec.nodes[root].dim, spec.root_dim
            )));
        }

        let mut edge_of: HashMap<&str, &EdgeSpec> = HashMap::new();
        for e in &spec.edges {
            if !index.contains_key(e.child.as_str()) {
                return Err(Error::Config(format!("edge into unknown node `{}`", e.child)));
            }
            if edge_of.insert(e.child.as_str(), e).is_some() {
                return Err(Error::Config(format!("node `{}` has two incoming edges", e.child)));
            }
        }

        // Breadth-first order; anything unreachable sits on a cycle.
        let mut order = Vec::with_capacity(spec.nodes.len());
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for c in &spec.nodes[i].children {
                queue.push_back(index[c.as_str()]);
            }
        }
        if order.len() != spec.nodes.len() {
            return Err(Error::Config("node graph contains a cycle".into()));
        }
        let position: HashMap<usize, usize> =
            order.iter().enumerate().map(|(pos, &i)| (i, pos)).collect();

        // Parameter slices in edge declaration order; shared groups reuse a slice.
        let mut slices: HashMap<&str, Range<usize>> = HashMap::new();
        let mut groups: HashMap<&str, (Range<usize>, Vec<usize>)> = HashMap::new();
        let mut n_params = 0;
        for e in &spec.edges {
            let ci = index[e.child.as_str()];
            let Some(pi) = parent[ci] else {
                return Err(Error::Config(format!("edge into the root `{}`", e.child)));
            };
            let parent_dim = spec.nodes[pi].dim;
            let count = e.weight.param_count(parent_dim);
            let range = match e.weight.share_group() {
                Some(group) => {
                    let sizes = e.weight.layer_sizes(parent_dim).unwrap();
                    match groups.get(group) {
                        Some((r, s)) if *s == sizes => r.clone(),
                        Some(_) => {
                            return Err(Error::Config(format!(
                                "shared weight group `{group}` used with different architectures"
                            )))
                        }
                        None => {
                            let r = n_params..n_params + count;
                            n_params += count;
                            groups.insert(group, (r.clone(), sizes));
                            r
                        }
                    }
                }
                None => {
                    let r = n_params..n_params + count;
                    n_params += count;
                    r
                }
            };
            slices.insert(e.child.as_str(), range);
        }

        let mut nodes = Vec::with_capacity(order.len());
        for &i in &order {
            let n = &spec.nodes[i];
            let ctx = |e: Error| e.at_node(n.id.clone());
            let leaf = spec.leaves.get(&n.id).cloned();
            match (&leaf, n.children.is_empty()) {
                (Some(_), false) => {
                    return Err(ctx(Error::Config("internal node has a leaf policy".into())))
                }
                (None, true) => return Err(ctx(Error::Config("leaf node has no policy".into()))),
                _ => {}
            }
            if let Some(l) = &leaf {
                l.validate().map_err(ctx)?;
                if crate::gds::Gds::dim(l) != n.dim {
                    return Err(ctx(Error::Dimension(format!(
                        "leaf policy has dimension {} but the node has {}",
                        crate::gds::Gds::dim(l),
                        n.dim
                    ))));
                }
            }
            let (map, weight, params) = match parent[i] {
                None => (None, None, 0..0),
                Some(pi) => {
                    let e = edge_of
                        .get(n.id.as_str())
                        .ok_or_else(|| ctx(Error::Config("missing incoming edge".into())))?;
                    let parent_dim = spec.nodes[pi].dim;
                    if e.map.in_dim() != parent_dim || e.map.out_dim() != n.dim {
                        return Err(ctx(Error::Dimension(format!(
                            "edge map is {} → {} but parent/child dims are {} → {}",
                            e.map.in_dim(),
                            e.map.out_dim(),
                            parent_dim,
                            n.dim
                        ))));
                    }
                    e.map.validate(spec.aux_dim).map_err(ctx)?;
                    e.weight.validate(parent_dim, spec.aux_dim).map_err(ctx)?;
                    (
                        Some(e.map.clone()),
                        Some(e.weight.clone()),
                        slices[n.id.as_str()].clone(),
                    )
                }
            };
            nodes.push(CompiledNode {
                id: n.id.clone(),
                dim: n.dim,
                parent: parent[i].map(|p| position[&p]),
                children: n.children.iter().map(|c| position[&index[c.as_str()]]).collect(),
                map,
                weight,
                params,
                leaf,
            });
        }
        for id in spec.leaves.keys() {
            if !index.contains_key(id.as_str()) {
                return Err(Error::Config(format!("leaf policy for unknown node `{id}`")));
            }
        }
        let digest = spec.digest();
        Ok(Tree {
            spec,
            nodes,
            n_params,
            digest,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Tree::new(TreeSpec::from_json(text)?)
    }

    pub fn spec(&self) -> &TreeSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn root_dim(&self) -> usize {
        self.spec.root_dim
    }

    pub fn aux_dim(&self) -> usize {
        self.spec.aux_dim
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Node ids in evaluation (topological) order, root first.
    pub fn node_ids(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.id.as_str()).collect()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// `(node id, parameter range)` for every learnable edge, in layout order.
    pub fn param_slices(&self) -> Vec<(String, Range<usize>)> {
        let mut out: Vec<(String, Range<usize>)> = self
            .nodes
            .iter()
            .filter(|n| !n.params.is_empty())
            .map(|n| (n.id.clone(), n.params.clone()))
            .collect();
        out.sort_by_key(|(_, r)| r.start);
        out
    }

    /// Parameter vector drawn from each learnable weight's initialiser.
    pub fn init_params(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.n_params];
        let mut filled = vec![false; self.n_params];
        for e in &self.spec.edges {
            let node = &self.nodes[self.node_index(&e.child).unwrap()];
            if node.params.is_empty() || filled[node.params.start] {
                continue;
            }
            let parent_dim = self.nodes[node.parent.unwrap()].dim;
            let init = e.weight.init_params(parent_dim, rng);
            params[node.params.clone()].copy_from_slice(&init);
            filled[node.params.clone()].iter_mut().for_each(|f| *f = true);
        }
        params
    }

    fn check_state(&self, q: &[f64], qd: &[f64], aux: &[f64]) -> Result<()> {
        if q.len() != self.root_dim() || qd.len() != self.root_dim() || aux.len() != self.aux_dim()
        {
            return Err(Error::Dimension(format!(
                "state sizes (q {}, qd {}, aux {}) do not match tree (root {}, aux {})",
                q.len(),
                qd.len(),
                aux.len(),
                self.root_dim(),
                self.aux_dim()
            )));
        }
        if q.iter().chain(qd).chain(aux).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite state".into()));
        }
        Ok(())
    }

    /// Propagates `(q, q̇)` to every node and evaluates every leaf.
    pub fn pushforward(&self, q: &[f64], qd: &[f64], aux: &[f64]) -> Result<Frame> {
        self.check_state(q, qd, aux)?;
        let n = self.nodes.len();
        let mut frame = Frame {
            aux: aux.to_vec(),
            x: Vec::with_capacity(n),
            xd: Vec::with_capacity(n),
            j: Vec::with_capacity(n),
            jdot_xd: Vec::with_capacity(n),
            leaves: Vec::with_capacity(n),
        };
        for node in &self.nodes {
            match (node.parent, &node.map) {
                (Some(p), Some(map)) => {
                    let e = map
                        .evaluate(&frame.x[p], &frame.xd[p], aux)
                        .map_err(|e| e.at_node(node.id.clone()))?;
                    frame.x.push(e.y);
                    frame.xd.push(e.yd);
                    frame.j.push(Some(e.j));
                    frame.jdot_xd.push(Some(e.jdot_xd));
                }
                _ => {
                    frame.x.push(q.to_vec());
                    frame.xd.push(qd.to_vec());
                    frame.j.push(None);
                    frame.jdot_xd.push(None);
                }
            }
            let i = frame.x.len() - 1;
            let leaf = match &node.leaf {
                Some(l) => Some(
                    l.evaluate(&frame.x[i], &frame.xd[i])
                        .map_err(|e| e.at_node(node.id.clone()))?,
                ),
                None => None,
            };
            frame.leaves.push(leaf);
        }
        Ok(frame)
    }

    /// Outputs at every node (evaluation order) for the given parameters.
    pub fn pullback_all<S: Real>(&self, frame: &Frame, params: &[S]) -> Result<Vec<NodeOutput<S>>> {
        if params.len() != self.n_params {
            return Err(Error::Dimension(format!(
                "tree has {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        let n = self.nodes.len();
        let mut outputs: Vec<Option<NodeOutput<S>>> = vec![None; n];
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            let out = if let Some(leaf) = &frame.leaves[i] {
                NodeOutput::from_leaf(leaf)
            } else {
                let x = &frame.x[i];
                let mut weights = Vec::with_capacity(node.children.len());
                for &c in &node.children {
                    let child = &self.nodes[c];
                    let spec = child.weight.as_ref().expect("non-root nodes carry a weight");
                    let (w, gw) = spec
                        .eval(x, &frame.aux, &params[child.params.clone()])
                        .map_err(|e| e.at_node(child.id.clone()))?;
                    if !(w.value() >= 0.0) {
                        return Err(Error::Contract(format!(
                            "edge {} → {} has weight {}",
                            node.id,
                            child.id,
                            w.value()
                        ))
                        .at_node(child.id.clone()));
                    }
                    weights.push((w, gw));
                }
                let contributions: Vec<ChildContribution<'_, S>> = node
                    .children
                    .iter()
                    .zip(&weights)
                    .map(|(&c, (w, gw))| ChildContribution {
                        out: outputs[c].as_ref().expect("children are evaluated first"),
                        j: frame.j[c].as_ref().expect("child edges have Jacobians"),
                        jdot_xd: frame.jdot_xd[c].as_ref().expect("child edges have curvature"),
                        w: *w,
                        grad_w: gw,
                    })
                    .collect();
                pullback_star(x, &frame.xd[i], &contributions)
                    .map_err(|e| e.at_node(node.id.clone()))?
            };
            outputs[i] = Some(out);
        }
        Ok(outputs.into_iter().map(|o| o.unwrap()).collect())
    }

    pub fn root_output<S: Real>(&self, frame: &Frame, params: &[S]) -> Result<NodeOutput<S>> {
        Ok(self.pullback_all(frame, params)?.swap_remove(0))
    }

    /// Root acceleration for an already pushed-forward state.
    pub fn resolve_frame<S: Real>(
        &self,
        frame: &Frame,
        params: &[S],
        opts: &EvalOptions,
    ) -> Result<(Vec<S>, NodeOutput<S>)> {
        let root = self.root_output(frame, params)?;
        let a = resolve(&root.f, &root.m, opts).map_err(|e| e.at_node(self.nodes[0].id.clone()))?;
        Ok((a, root))
    }

    pub fn evaluate_policy(
        &self,
        q: &[f64],
        qd: &[f64],
        aux: &[f64],
        params: &[f64],
    ) -> Result<PolicyEval> {
        self.evaluate_policy_with(q, qd, aux, params, &EvalOptions::default())
    }

    pub fn evaluate_policy_with(
        &self,
        q: &[f64],
        qd: &[f64],
        aux: &[f64],
        params: &[f64],
        opts: &EvalOptions,
    ) -> Result<PolicyEval> {
        let frame = self.pushforward(q, qd, aux)?;
        let (a, root) = self.resolve_frame(&frame, params, opts)?;
        let min_eig = root.m.min_eigenvalue()?;
        if min_eig < MIN_EIG_WARNING {
            log::warn!(
                "root inertia of `{}` is near singular (min eigenvalue {min_eig:.3e}); stability is not certified",
                self.name()
            );
        }
        Ok(PolicyEval { a, root, min_eig })
    }

    pub fn lyapunov_root(&self, q: &[f64], qd: &[f64], aux: &[f64], params: &[f64]) -> Result<f64> {
        let frame = self.pushforward(q, qd, aux)?;
        Ok(self.root_output(&frame, params)?.v)
    }

    /// Evaluates a weight on the edge into `child` at its parent's coordinate.
    pub fn edge_weight(&self, frame: &Frame, child: usize, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let node = &self.nodes[child];
        let (Some(p), Some(w)) = (node.parent, &node.weight) else {
            return Err(Error::Config(format!("`{}` has no incoming edge", node.id)));
        };
        w.eval(&frame.x[p], &frame.aux, &params[node.params.clone()])
    }

    /// Parent index of each node in evaluation order.
    pub fn parents(&self) -> Vec<Option<usize>> {
        self.nodes.iter().map(|n| n.parent).collect()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.nodes[i].leaf.is_some()
    }

    pub fn node_dim(&self, i: usize) -> usize {
        self.nodes[i].dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Activation;

    fn one_leaf(leaf: LeafSpec, dim: usize) -> TreeSpec {
        TreeSpec {
            schema_version: SCHEMA_VERSION,
            name: "one".into(),
            root_dim: dim,
            aux_dim: 0,
            nodes: vec![
                NodeSpec {
                    id: "root".into(),
                    dim,
                    children: vec!["leaf".into()],
                },
                NodeSpec {
                    id: "leaf".into(),
                    dim,
                    children: vec![],
                },
            ],
            edges: vec![EdgeSpec {
                child: "leaf".into(),
                map: TaskMap::identity(dim),
                weight: WeightSpec::constant(1.0),
            }],
            leaves: BTreeMap::from([("leaf".into(), leaf)]),
        }
    }

    #[test]
    fn identity_metric_leaf_gives_zero_action() {
        let tree = Tree::new(one_leaf(LeafSpec::identity_metric(2, 1.0).unwrap(), 2)).unwrap();
        let eval = tree.evaluate_policy(&[0.3, 1.0], &[2.0, -1.0], &[], &[]).unwrap();
        assert_eq!(eval.a, vec![0.0, 0.0]);
    }

    #[test]
    fn single_node_tree() {
        let spec = TreeSpec {
            schema_version: SCHEMA_VERSION,
            name: "root-only".into(),
            root_dim: 1,
            aux_dim: 0,
            nodes: vec![NodeSpec {
                id: "q".into(),
                dim: 1,
                children: vec![],
            }],
            edges: vec![],
            leaves: BTreeMap::from([(
                "q".into(),
                LeafSpec::Spring {
                    dim: 1,
                    mass: 2.0,
                    stiffness: 4.0,
                    damping: 0.0,
                },
            )]),
        };
        let tree = Tree::new(spec).unwrap();
        let frame = tree.pushforward(&[1.0], &[0.5], &[]).unwrap();
        assert_eq!(frame.x, vec![vec![1.0]]);
        let eval = tree.evaluate_policy(&[1.0], &[0.0], &[], &[]).unwrap();
        assert!((eval.a[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn correction_term_hand_value() {
        // 1-D child, identity map, G₁ = 2, L₁ = 3, w = x at x = 1, ẋ = 2.
        let child = NodeOutput {
            f: vec![0.5],
            m: Matrix::diag(&[2.0]),
            g: Matrix::diag(&[2.0]),
            b: Matrix::zeros(1, 1),
            phi: 1.0,
            l: 3.0,
            v: 5.0,
        };
        let j = Matrix::identity(1);
        let out = pullback_star(
            &[1.0],
            &[2.0],
            &[ChildContribution {
                out: &child,
                j: &j,
                jdot_xd: &[0.0],
                w: 1.0,
                grad_w: &[1.0],
            }],
        )
        .unwrap();
        assert!((out.f[0] - (0.5 - 5.0)).abs() < 1e-15);
    }

    #[test]
    fn negative_weight_breaks_contract() {
        let mut spec = one_leaf(LeafSpec::identity_metric(1, 1.0).unwrap(), 1);
        spec.edges[0].weight = WeightSpec::constant(-0.5);
        let tree = Tree::new(spec).unwrap();
        let err = tree.evaluate_policy(&[0.0], &[0.0], &[], &[]).unwrap_err();
        assert!(err.is_contract_violation(), "{err}");
    }

    #[test]
    fn resolve_examples() {
        let opts = EvalOptions::default();
        assert_eq!(resolve(&[3.0, -1.0], &Matrix::identity(2), &opts).unwrap(), vec![3.0, -1.0]);
        assert_eq!(resolve(&[3.0, -1.0], &Matrix::zeros(2, 2), &opts).unwrap(), vec![0.0, 0.0]);
        let a = resolve(&[2.0, 4.0], &Matrix::diag(&[2.0, 4.0]), &opts).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-15 && (a[1] - 1.0).abs() < 1e-15);
        assert!(resolve(&[1.0, 1.0], &Matrix::diag(&[1.0, -1.0]), &opts)
            .unwrap_err()
            .is_contract_violation());
    }

    #[test]
    fn malformed_trees_rejected() {
        let mut spec = one_leaf(LeafSpec::identity_metric(2, 1.0).unwrap(), 2);
        spec.nodes[1].children.push("root".into());
        assert!(Tree::new(spec).is_err());

        let mut spec = one_leaf(LeafSpec::identity_metric(2, 1.0).unwrap(), 2);
        spec.leaves.clear();
        assert!(Tree::new(spec).is_err());

        let mut spec = one_leaf(LeafSpec::identity_metric(2, 1.0).unwrap(), 2);
        spec.edges[0].map = TaskMap::identity(3);
        assert!(matches!(Tree::new(spec).unwrap_err().root_cause(), Error::Dimension(_)));
    }

    #[test]
    fn two_step_expansion_shape() {
        let mut spec = one_leaf(LeafSpec::identity_metric(2, 1.0).unwrap(), 2);
        spec.edges[0].weight = WeightSpec::mlp(&[3], Activation::Tanh, &[]);
        let expanded = spec.decompose_two_step();
        assert_eq!(expanded.edges.len(), 2 * spec.edges.len());
        let a = Tree::new(spec).unwrap();
        let b = Tree::new(expanded).unwrap();
        assert_eq!(a.n_params(), b.n_params());
        assert_eq!(b.node_count(), 3);
    }

    #[test]
    fn reduction_is_idempotent() {
        let mut spec = one_leaf(LeafSpec::identity_metric(2, 1.0).unwrap(), 2);
        spec.edges[0].weight = WeightSpec::constant(3.0);
        let once = spec.reduce_to_rmpflow();
        assert_eq!(once.reduce_to_rmpflow(), once);
    }
}
