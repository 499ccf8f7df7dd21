mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmpfusion::fixtures;
use rmpfusion::tree::Tree;
use rmpfusion::verify::{random_tree, RandomTreeOptions, WeightMode};
use rmpfusion::weights::WeightSpec;
use rmpfusion::Error;
use support::{max_abs_diff, unweighted_rmp, ytree_closed_form};

fn state(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    let qd = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (q, qd)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_weights_match_unweighted_combination(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_tree(&mut rng, &RandomTreeOptions::default());
        let tree = Tree::new(spec.clone()).unwrap();
        let (q, qd) = state(seed ^ 1, spec.root_dim);
        let (a_ref, f_ref, m_ref) = unweighted_rmp(&spec, &q, &qd, &[]);
        let ev = tree.evaluate_policy(&q, &qd, &[], &[]).unwrap();
        prop_assert!(max_abs_diff(&ev.a, &a_ref) < 1e-10);
        prop_assert!(max_abs_diff(&ev.root.f, &f_ref) < 1e-10);
        let m = support::to_na(&ev.root.m);
        prop_assert!((m - m_ref).abs().max() < 1e-10);
    }

    #[test]
    fn scaling_all_weights_leaves_the_policy_unchanged(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = RandomTreeOptions { weights: WeightMode::Random, ..RandomTreeOptions::default() };
        let mut spec = random_tree(&mut rng, &opts);
        // Replace learnable weights by constants so scaling is exact.
        for e in &mut spec.edges {
            if e.weight.is_learnable() {
                e.weight = WeightSpec::constant(0.7);
            }
        }
        let (q, qd) = state(seed ^ 2, spec.root_dim);
        let a = Tree::new(spec.clone()).unwrap().evaluate_policy(&q, &qd, &[], &[]).unwrap().a;
        let mut scaled = spec.clone();
        let root = &spec.nodes[0].id;
        for e in &mut scaled.edges {
            let top = spec.nodes.iter().any(|n| &n.id == root && n.children.contains(&e.child));
            if !top {
                continue;
            }
            e.weight = match &e.weight {
                WeightSpec::Constant { value } => WeightSpec::constant(value * c),
                WeightSpec::Radial { center, radius, base, gain, length_scale } => WeightSpec::Radial {
                    center: center.clone(),
                    radius: radius.clone(),
                    base: base * c,
                    gain: gain * c,
                    length_scale: *length_scale,
                },
                other => other.clone(),
            };
        }
        let b = Tree::new(scaled).unwrap().evaluate_policy(&q, &qd, &[], &[]).unwrap().a;
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs_diff(&a, &b) <= 1e-8 * scale, "{a:?} vs {b:?}");
    }

    #[test]
    fn two_step_expansion_preserves_the_root(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = RandomTreeOptions { weights: WeightMode::Random, ..RandomTreeOptions::default() };
        let spec = random_tree(&mut rng, &opts);
        let tree = Tree::new(spec.clone()).unwrap();
        let expanded = Tree::new(spec.decompose_two_step()).unwrap();
        let params = tree.init_params(&mut rng);
        let (q, qd) = state(seed ^ 3, spec.root_dim);
        let a = tree.evaluate_policy(&q, &qd, &[], &params).unwrap();
        let b = expanded.evaluate_policy(&q, &qd, &[], &params).unwrap();
        prop_assert!(max_abs_diff(&a.a, &b.a) < 1e-10);
        prop_assert!((a.root.v - b.root.v).abs() < 1e-10);
    }
}

#[test]
fn ytree_matches_its_closed_form() {
    let tree = Tree::new(fixtures::tree_spec("ytree").unwrap()).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (q, qd) = state(seed, 2);
        let a = tree.evaluate_policy(&q, &qd, &[], &[]).unwrap().a;
        worst = worst.max(max_abs_diff(&a, &ytree_closed_form(&q, &qd, false, false)));
    }
    assert!(worst < 1e-8, "worst {worst:e}");
}

#[test]
fn ytree_root_energy_matches_the_weighted_sum() {
    let tree = Tree::new(fixtures::tree_spec("ytree").unwrap().undamped()).unwrap();
    for seed in 0..20 {
        let (q, qd) = state(seed, 2);
        let v = tree.lyapunov_root(&q, &qd, &[], &[]).unwrap();
        assert!((v - support::ytree_energy(&q, &qd, false)).abs() < 1e-10);
    }
}

#[test]
fn negative_weight_is_a_contract_violation() {
    let mut spec = fixtures::tree_spec("ytree").unwrap();
    spec.edges[1].weight = WeightSpec::constant(-1.0);
    let err = match Tree::new(spec) {
        Err(e) => e,
        Ok(t) => t.evaluate_policy(&[0.1, 0.2], &[0.0, 0.0], &[], &[]).unwrap_err(),
    };
    assert!(err.is_contract_violation(), "{err}");
}

#[test]
fn spec_round_trips_through_json() {
    for name in fixtures::TREES {
        let spec = fixtures::tree_spec(name).unwrap();
        let back = rmpfusion::TreeSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.digest(), back.digest());
    }
}

#[test]
fn malformed_specs_are_rejected() {
    let mut spec = fixtures::tree_spec("ytree").unwrap();
    spec.nodes[1].dim = 3;
    let err = Tree::new(spec).unwrap_err();
    assert!(matches!(err.root_cause(), Error::Dimension(_) | Error::Config(_)), "{err}");
    let mut spec = fixtures::tree_spec("ytree").unwrap();
    spec.leaves.clear();
    assert!(Tree::new(spec).is_err());
}
