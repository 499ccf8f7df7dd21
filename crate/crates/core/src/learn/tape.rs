//! Scalar reverse-mode tape.
//!
//! A [`Var`] is either a folded constant or a handle to a node on a [`Tape`].
//! Each node stores its forward value, the operation that produced it (so the
//! tape can be replayed) and its local partials with respect to its parents.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::numerics::{pseudo_inverse, sigmoid_f64, softplus_f64, Matrix, Real};

/// What an input node stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputTag {
    State,
    Aux,
    Param,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Input(InputTag),
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddC(f64),
    SubC(f64),
    RSubC(f64),
    MulC(f64),
    DivC(f64),
    RDivC(f64),
    Tanh,
    Exp,
    Sqrt,
    Softplus,
    Sigmoid,
    /// Component `k` of `M† f` where the first `n` parents are `f` and the next
    /// `n²` are `M` in row-major order.
    Resolve { n: u32, k: u32, tol: f64 },
}

#[derive(Clone, Copy, Debug)]
struct Node {
    val: f64,
    op: Op,
    first_edge: u32,
    n_edges: u32,
}

#[derive(Default)]
struct TapeData {
    nodes: Vec<Node>,
    /// (parent index, local partial)
    edges: Vec<(u32, f64)>,
}

#[derive(Default)]
pub struct Tape {
    data: RefCell<TapeData>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Drops all recorded nodes but keeps the allocations.
    pub fn clear(&self) {
        let mut d = self.data.borrow_mut();
        d.nodes.clear();
        d.edges.clear();
    }

    pub fn len(&self) -> usize {
        self.data.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, val: f64, tag: InputTag) -> Var<'_> {
        self.push(val, Op::Input(tag), &[])
    }

    pub fn inputs(&self, vals: &[f64], tag: InputTag) -> Vec<Var<'_>> {
        vals.iter().map(|&v| self.input(v, tag)).collect()
    }

    fn push(&self, val: f64, op: Op, edges: &[(u32, f64)]) -> Var<'_> {
        let mut d = self.data.borrow_mut();
        let first_edge = d.edges.len() as u32;
        d.edges.extend_from_slice(edges);
        let idx = d.nodes.len() as u32;
        d.nodes.push(Node {
            val,
            op,
            first_edge,
            n_edges: edges.len() as u32,
        });
        Var::Node { tape: self, idx, val }
    }

    fn ensure_node<'t>(&'t self, v: Var<'t>) -> u32 {
        match v {
            Var::Node { idx, .. } => idx,
            Var::Const(c) => match self.push(c, Op::Const, &[]) {
                Var::Node { idx, .. } => idx,
                Var::Const(_) => unreachable!(),
            },
        }
    }

    /// Adjoints of every node with respect to `output`.
    pub fn backward(&self, output: Var<'_>) -> Vec<f64> {
        self.backward_counting(output).0
    }

    /// Like [`Tape::backward`], also returning how many nodes were visited.
    pub fn backward_counting(&self, output: Var<'_>) -> (Vec<f64>, usize) {
        let d = self.data.borrow();
        let mut adj = vec![0.0; d.nodes.len()];
        let Var::Node { idx, .. } = output else {
            return (adj, 0);
        };
        adj[idx as usize] = 1.0;
        let mut visited = 0;
        for i in (0..=idx as usize).rev() {
            visited += 1;
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = d.nodes[i];
            let start = node.first_edge as usize;
            for &(p, partial) in &d.edges[start..start + node.n_edges as usize] {
                adj[p as usize] += a * partial;
            }
        }
        (adj, visited)
    }

    /// Gradient of `output` with respect to the listed variables (zero for constants).
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Vec<f64> {
        let adj = self.backward(output);
        wrt.iter()
            .map(|v| match v {
                Var::Node { idx, .. } => adj[*idx as usize],
                Var::Const(_) => 0.0,
            })
            .collect()
    }

    /// Recomputes every node value from the recorded inputs and operations.
    pub fn replay(&self) -> Result<Vec<f64>> {
        let d = self.data.borrow();
        let mut vals: Vec<f64> = Vec::with_capacity(d.nodes.len());
        for node in &d.nodes {
            let start = node.first_edge as usize;
            let parents = &d.edges[start..start + node.n_edges as usize];
            let p = |k: usize| vals[parents[k].0 as usize];
            let v = match node.op {
                Op::Input(_) | Op::Const => node.val,
                Op::Add => p(0) + p(1),
                Op::Sub => p(0) - p(1),
                Op::Mul => p(0) * p(1),
                Op::Div => p(0) / p(1),
                Op::Neg => -p(0),
                Op::AddC(c) => p(0) + c,
                Op::SubC(c) => p(0) - c,
                Op::RSubC(c) => c - p(0),
                Op::MulC(c) => p(0) * c,
                Op::DivC(c) => p(0) / c,
                Op::RDivC(c) => c / p(0),
                Op::Tanh => p(0).tanh(),
                Op::Exp => p(0).exp(),
                Op::Sqrt => p(0).sqrt(),
                Op::Softplus => softplus_f64(p(0)),
                Op::Sigmoid => sigmoid_f64(p(0)),
                Op::Resolve { n, k, tol } => {
                    let n = n as usize;
                    let f: Vec<f64> = (0..n).map(p).collect();
                    let m = Matrix::new(n, n, (n..n + n * n).map(p).collect())?;
                    let a = f64::pinv_solve(&m, &f, tol)?;
                    a[k as usize]
                }
            };
            vals.push(v);
        }
        Ok(vals)
    }

    /// Indices of the input nodes carrying `tag`, in recording order.
    pub fn inputs_tagged(&self, tag: InputTag) -> Vec<usize> {
        let d = self.data.borrow();
        d.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Input(t) if t == tag))
            .map(|(i, _)| i)
            .collect()
    }

    /// Recorded forward value of a node.
    pub fn value_of(&self, v: Var<'_>) -> f64 {
        match v {
            Var::Node { idx, .. } => self.data.borrow().nodes[idx as usize].val,
            Var::Const(c) => c,
        }
    }

    pub fn index_of(v: Var<'_>) -> Option<usize> {
        match v {
            Var::Node { idx, .. } => Some(idx as usize),
            Var::Const(_) => None,
        }
    }
}

/// A scalar that is either a folded constant or a node on a tape.
#[derive(Clone, Copy)]
pub enum Var<'t> {
    Const(f64),
    Node { tape: &'t Tape, idx: u32, val: f64 },
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Const(c) => write!(f, "Const({c})"),
            Var::Node { idx, val, .. } => write!(f, "Node#{idx}({val})"),
        }
    }
}

impl<'t> Var<'t> {
    fn unary(self, val: f64, op: Op, partial: f64) -> Self {
        match self {
            Var::Const(_) => Var::Const(val),
            Var::Node { tape, idx, .. } => tape.push(val, op, &[(idx, partial)]),
        }
    }

    fn binary(self, rhs: Self, val: f64, op: Op, da: f64, db: f64) -> Self {
        match (self, rhs) {
            (Var::Const(_), Var::Const(_)) => Var::Const(val),
            (Var::Node { tape, idx: a, .. }, Var::Node { idx: b, .. }) => {
                tape.push(val, op, &[(a, da), (b, db)])
            }
            // One side constant: record the equivalent constant-operand op so that
            // replay stays exact.
            (Var::Node { tape, idx, .. }, Var::Const(c)) => {
                let op = match op {
                    Op::Add => Op::AddC(c),
                    Op::Sub => Op::SubC(c),
                    Op::Mul => Op::MulC(c),
                    Op::Div => Op::DivC(c),
                    _ => unreachable!(),
                };
                tape.push(val, op, &[(idx, da)])
            }
            (Var::Const(c), Var::Node { tape, idx, .. }) => {
                let op = match op {
                    Op::Add => Op::AddC(c),
                    Op::Sub => Op::RSubC(c),
                    Op::Mul => Op::MulC(c),
                    Op::Div => Op::RDivC(c),
                    _ => unreachable!(),
                };
                tape.push(val, op, &[(idx, db)])
            }
        }
    }

    fn tape(self) -> Option<&'t Tape> {
        match self {
            Var::Const(_) => None,
            Var::Node { tape, .. } => Some(tape),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let v = self.value() + rhs.value();
        self.binary(rhs, v, Op::Add, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let v = self.value() - rhs.value();
        self.binary(rhs, v, Op::Sub, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, a * b, Op::Mul, b, a)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        let v = a / b;
        self.binary(rhs, v, Op::Div, 1.0 / b, -v / b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value(), Op::Neg, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        self.unary(self.value() + c, Op::AddC(c), 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        self.unary(self.value() - c, Op::SubC(c), 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.unary(self.value() * c, Op::MulC(c), c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        self.unary(self.value() / c, Op::DivC(c), 1.0 / c)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.unary(self - v.value(), Op::RSubC(self), -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, v: Var<'t>) -> Var<'t> {
        let x = v.value();
        v.unary(self / x, Op::RDivC(self), -self / (x * x))
    }
}

impl<'t> Real for Var<'t> {
    fn constant(v: f64) -> Self {
        Var::Const(v)
    }

    fn value(self) -> f64 {
        match self {
            Var::Const(c) => c,
            Var::Node { val, .. } => val,
        }
    }

    fn as_constant(self) -> Option<f64> {
        match self {
            Var::Const(c) => Some(c),
            Var::Node { .. } => None,
        }
    }

    fn tanh(self) -> Self {
        let t = self.value().tanh();
        self.unary(t, Op::Tanh, 1.0 - t * t)
    }

    fn exp(self) -> Self {
        let e = self.value().exp();
        self.unary(e, Op::Exp, e)
    }

    fn sqrt(self) -> Self {
        let s = self.value().sqrt();
        self.unary(s, Op::Sqrt, 0.5 / s)
    }

    fn softplus(self) -> Self {
        let x = self.value();
        self.unary(softplus_f64(x), Op::Softplus, sigmoid_f64(x))
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.value());
        self.unary(s, Op::Sigmoid, s * (1.0 - s))
    }

    fn pinv_solve(m: &Matrix<Self>, f: &[Self], tol: f64) -> Result<Vec<Self>> {
        let n = f.len();
        if m.rows() != n || m.cols() != n {
            return Err(Error::Dimension(format!(
                "resolve of {:?} against force of length {n}",
                m.shape()
            )));
        }
        let mv = m.values();
        let fv: Vec<f64> = f.iter().map(|v| v.value()).collect();
        let pinv = pseudo_inverse(&mv, tol)?;
        let a = pinv.matvec(&fv)?;
        let tape = f.iter().chain(m.as_slice()).find_map(|v| v.tape());
        let Some(tape) = tape else {
            return Ok(a.into_iter().map(Var::Const).collect());
        };
        let f_idx: Vec<u32> = f.iter().map(|&v| tape.ensure_node(v)).collect();
        let m_idx: Vec<u32> = m.as_slice().iter().map(|&v| tape.ensure_node(v)).collect();
        // a = M† f:  ∂a_k/∂f_j = P_kj,  ∂a_k/∂M_jl = -½(P_kj a_l + P_kl a_j)
        // (symmetrized because the inverse only sees the symmetric part of M).
        let mut edges = Vec::with_capacity(n + n * n);
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            edges.clear();
            for j in 0..n {
                edges.push((f_idx[j], pinv.get(k, j)));
            }
            for j in 0..n {
                for l in 0..n {
                    let partial = -0.5 * (pinv.get(k, j) * a[l] + pinv.get(k, l) * a[j]);
                    edges.push((m_idx[j * n + l], partial));
                }
            }
            let op = Op::Resolve {
                n: n as u32,
                k: k as u32,
                tol,
            };
            out.push(tape.push(a[k], op, &edges));
        }
        Ok(out)
    }
}
