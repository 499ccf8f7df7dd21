use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmpfusion::taskmaps::Source;
use rmpfusion::weights::{Activation, WeightSpec, MIN_WEIGHT};

fn specs() -> Vec<WeightSpec> {
    let mut distance = WeightSpec::mlp(&[6, 4], Activation::Tanh, &[0]);
    if let WeightSpec::Mlp { offset, distance_input, output_scale, .. } = &mut distance {
        *offset = vec![Source::Aux { aux: 1 }, Source::Value(0.5)];
        *distance_input = true;
        *output_scale = 1.0;
    }
    vec![
        WeightSpec::constant(0.3),
        WeightSpec::Radial {
            center: vec![Source::Value(0.2), Source::Aux { aux: 0 }],
            radius: Some(Source::Aux { aux: 1 }),
            base: 0.5,
            gain: 2.0,
            length_scale: 0.7,
        },
        WeightSpec::mlp(&[5], Activation::Elu, &[]),
        WeightSpec::mlp(&[4, 4], Activation::Tanh, &[0, 1]),
        distance,
    ]
}

proptest! {
    #[test]
    fn weights_are_positive_with_correct_gradients(
        x in prop::collection::vec(-2.0f64..2.0, 2),
        aux in prop::collection::vec(-1.0f64..1.0, 2),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in specs() {
            spec.validate(2, 2).unwrap();
            let params = spec.init_params(2, &mut rng);
            prop_assert_eq!(params.len(), spec.param_count(2));
            let (w, grad) = spec.eval::<f64>(&x, &aux, &params).unwrap();
            prop_assert!(w >= MIN_WEIGHT && w.is_finite());
            let h = 1e-6;
            for i in 0..2 {
                let mut p = x.clone();
                p[i] += h;
                let plus = spec.eval::<f64>(&p, &aux, &params).unwrap().0;
                p[i] -= 2.0 * h;
                let minus = spec.eval::<f64>(&p, &aux, &params).unwrap().0;
                let fd = (plus - minus) / (2.0 * h);
                prop_assert!((grad[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{spec:?}");
            }
        }
    }
}

#[test]
fn only_networks_are_learnable() {
    let s = specs();
    assert!(!s[0].is_learnable() && !s[1].is_learnable());
    assert!(s[2].is_learnable());
    assert!(WeightSpec::constant(1.0).is_unit());
}

#[test]
fn inconsistent_specs_are_rejected() {
    assert!(specs()[1].validate(3, 2).is_err());
    assert!(specs()[3].validate(2, 1).is_err());
    let bad = WeightSpec::Radial {
        center: vec![Source::Value(0.0)],
        radius: None,
        base: 0.0,
        gain: 1.0,
        length_scale: 1.0,
    };
    assert!(bad.validate(1, 0).is_err());
}

#[test]
fn wrong_parameter_count_is_an_error() {
    let spec = WeightSpec::mlp(&[3], Activation::Tanh, &[]);
    assert!(spec.eval::<f64>(&[0.0, 0.0], &[], &[0.0; 2]).is_err());
}
