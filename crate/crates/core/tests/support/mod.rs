//! Reference computations the library is checked against. They share map and
//! leaf evaluation with the library but none of the tree algebra.

#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rmpfusion::tree::TreeSpec;
use rmpfusion::Matrix;

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Pseudoinverse by SVD with a relative singular value cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(1e-12 * smax.max(1.0)).expect("svd has u and v")
}

/// Unweighted RMP combination: `f = Σ Jᵀ(f_c − M_c J̇ẋ)`, `M = Σ JᵀM_cJ`,
/// `a = M⁺f`. Returns `(a, f, M)` at the root.
pub fn unweighted_rmp(spec: &TreeSpec, q: &[f64], qd: &[f64], aux: &[f64]) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
    let children: HashMap<&str, &Vec<String>> = spec.nodes.iter().map(|n| (n.id.as_str(), &n.children)).collect();
    let is_child: std::collections::HashSet<&str> = spec.edges.iter().map(|e| e.child.as_str()).collect();
    let root = spec.nodes.iter().find(|n| !is_child.contains(n.id.as_str())).unwrap();

    fn rec(
        spec: &TreeSpec,
        children: &HashMap<&str, &Vec<String>>,
        id: &str,
        x: &[f64],
        xd: &[f64],
        aux: &[f64],
    ) -> (DVector<f64>, DMatrix<f64>) {
        if let Some(leaf) = spec.leaves.get(id) {
            let out = leaf.evaluate(x, xd).unwrap();
            return (DVector::from_column_slice(&out.f), to_na(&out.m));
        }
        let n = x.len();
        let mut f = DVector::zeros(n);
        let mut m = DMatrix::zeros(n, n);
        for c in children[id].iter() {
            let edge = spec.edges.iter().find(|e| &e.child == c).unwrap();
            let me = edge.map.evaluate(x, xd, aux).unwrap();
            let j = to_na(&me.j);
            let (fc, mc) = rec(spec, children, c, &me.y, &me.yd, aux);
            let jdxd = DVector::from_column_slice(&me.jdot_xd);
            f += j.transpose() * (fc - &mc * jdxd);
            m += j.transpose() * mc * j;
        }
        (f, m)
    }

    let (f, m) = rec(spec, &children, &root.id, q, qd, aux);
    let a = pinv(&m) * &f;
    (a.as_slice().to_vec(), f.as_slice().to_vec(), m)
}

// ---------------------------------------------------------------------------
// Y-tree closed form. Mirrors fixtures/ytree.json: two radial-metric leaves
// reached by a goal offset and an affine map, with radial edge weights.

const SMOOTH: f64 = 1e-2;

struct YLeaf {
    base: f64,
    curvature: f64,
    stiffness: f64,
    damping: f64,
}

struct YBranch {
    j: DMatrix<f64>,
    c: DVector<f64>,
    w_center: [f64; 2],
    w_base: f64,
    w_gain: f64,
    w_len: f64,
    leaf: YLeaf,
}

fn ytree_branches(undamped: bool, unit_weights: bool) -> [YBranch; 2] {
    let d = |b: f64| if undamped { 0.0 } else { b };
    let w = |base: f64, gain: f64| if unit_weights { (1.0, 0.0) } else { (base, gain) };
    let (b0, g0) = w(1.0, 0.5);
    let (b1, g1) = w(0.5, 1.0);
    [
        YBranch {
            j: DMatrix::identity(2, 2),
            c: DVector::from_column_slice(&[-1.0, -0.5]),
            w_center: [0.0, 0.0],
            w_base: b0,
            w_gain: g0,
            w_len: 1.0,
            leaf: YLeaf {
                base: 1.0,
                curvature: 0.3,
                stiffness: 2.0,
                damping: d(0.7),
            },
        },
        YBranch {
            j: DMatrix::from_row_slice(1, 2, &[0.6, -0.8]),
            c: DVector::from_column_slice(&[0.2]),
            w_center: [1.0, -1.0],
            w_base: b1,
            w_gain: g1,
            w_len: 2.0,
            leaf: YLeaf {
                base: 0.5,
                curvature: 1.0,
                stiffness: 1.0,
                damping: d(0.4),
            },
        },
    ]
}

fn weight(b: &YBranch, q: &DVector<f64>) -> f64 {
    let dist = ((q[0] - b.w_center[0]).powi(2) + (q[1] - b.w_center[1]).powi(2) + SMOOTH * SMOOTH).sqrt();
    b.w_base + b.w_gain * (-dist / b.w_len).exp()
}

fn metric(branches: &[YBranch], q: &DVector<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(2, 2);
    for b in branches {
        let y = &b.j * q + &b.c;
        let s = b.leaf.base + b.leaf.curvature * y.norm_squared();
        g += weight(b, q) * s * b.j.transpose() * &b.j;
    }
    g
}

fn potential(branches: &[YBranch], q: &DVector<f64>) -> f64 {
    branches
        .iter()
        .map(|b| {
            let y = &b.j * q + &b.c;
            weight(b, q) * 0.5 * b.leaf.stiffness * y.norm_squared()
        })
        .sum()
}

/// Root acceleration of the Euler-Lagrange system with Lagrangian
/// `½q̇ᵀG_r q̇ − Φ_r` and damping `B_r`, where `G_r`, `Φ_r`, `B_r` are the
/// weighted sums over branches. Derivatives by central differences.
pub fn ytree_closed_form(q: &[f64], qd: &[f64], undamped: bool, unit_weights: bool) -> Vec<f64> {
    let br = ytree_branches(undamped, unit_weights);
    let qv = DVector::from_column_slice(q);
    let v = DVector::from_column_slice(qd);
    let h = 1e-5;
    let shift = |s: usize, t: f64| {
        let mut p = qv.clone();
        p[s] += t;
        p
    };
    let dg: Vec<DMatrix<f64>> = (0..2)
        .map(|s| (metric(&br, &shift(s, h)) - metric(&br, &shift(s, -h))) / (2.0 * h))
        .collect();
    let grad_phi = DVector::from_fn(2, |s, _| {
        (potential(&br, &shift(s, h)) - potential(&br, &shift(s, -h))) / (2.0 * h)
    });
    // ξ_r = Σ_s (∂G/∂q_s) q̇_s q̇ − ½ (q̇ᵀ ∂G/∂q_r q̇)_r
    let mut xi = DVector::zeros(2);
    for s in 0..2 {
        xi += &dg[s] * &v * v[s];
        xi[s] -= 0.5 * v.dot(&(&dg[s] * &v));
    }
    let mut b = DMatrix::zeros(2, 2);
    for x in &br {
        b += weight(x, &qv) * x.leaf.damping * x.j.transpose() * &x.j;
    }
    let g = metric(&br, &qv);
    let rhs = -grad_phi - b * &v - xi;
    let a = g.lu().solve(&rhs).expect("metric is invertible");
    a.as_slice().to_vec()
}

/// `½q̇ᵀG_r q̇ + Φ_r` of the Y-tree.
pub fn ytree_energy(q: &[f64], qd: &[f64], unit_weights: bool) -> f64 {
    let br = ytree_branches(true, unit_weights);
    let qv = DVector::from_column_slice(q);
    let v = DVector::from_column_slice(qd);
    0.5 * v.dot(&(metric(&br, &qv) * &v)) + potential(&br, &qv)
}
