use proptest::prelude::*;
use rmpfusion::taskmaps::{LimitSide, TaskMap};
use rmpfusion::Matrix;

fn maps() -> Vec<(TaskMap, usize)> {
    vec![
        (TaskMap::identity(3), 3),
        (
            TaskMap::affine(Matrix::from_rows(&[&[0.5, -1.0, 2.0], &[1.0, 0.0, 0.3]]).unwrap(), vec![0.1, -0.2]).unwrap(),
            3,
        ),
        (TaskMap::goal_offset(&[0.4, -0.3]), 2),
        (TaskMap::distance_to_point(&[2.0, 2.0, 2.0], 0.4), 3),
        (TaskMap::joint_limit(3, 1, -2.5, LimitSide::Lower), 3),
        (TaskMap::joint_limit(3, 2, 2.5, LimitSide::Upper), 3),
        (TaskMap::planar_fk(&[1.0, 0.8, 0.6], 2, 1.0).unwrap(), 3),
        (TaskMap::planar_fk(&[1.0, 0.8, 0.6], 1, 0.5).unwrap(), 3),
        (
            TaskMap::compose(TaskMap::distance_to_point(&[1.5, 1.5], 0.2), TaskMap::planar_fk(&[1.0, 0.8, 0.6], 2, 1.0).unwrap())
                .unwrap(),
            3,
        ),
    ]
}

fn jacobian_fd(map: &TaskMap, x: &[f64]) -> Vec<Vec<f64>> {
    let h = 1e-6;
    let m = map.out_dim();
    let mut cols = vec![vec![0.0; x.len()]; m];
    for i in 0..x.len() {
        let mut p = x.to_vec();
        p[i] += h;
        let plus = map.eval(&p, &[]).unwrap();
        p[i] -= 2.0 * h;
        let minus = map.eval(&p, &[]).unwrap();
        for r in 0..m {
            cols[r][i] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    cols
}

proptest! {
    #[test]
    fn jacobians_match_finite_differences(x in prop::collection::vec(-1.5f64..1.5, 3)) {
        for (map, n) in maps() {
            let x = &x[..n];
            let j = map.jacobian(x, &[]).unwrap();
            let fd = jacobian_fd(&map, x);
            for (r, row) in fd.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    prop_assert!((j.get(r, c) - v).abs() < 1e-6, "{map:?} at {x:?}");
                }
            }
        }
    }

    #[test]
    fn curvature_is_the_time_derivative_of_the_jacobian(
        x in prop::collection::vec(-1.5f64..1.5, 3),
        xd in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let h = 1e-6;
        for (map, n) in maps() {
            let (x, xd) = (&x[..n], &xd[..n]);
            let at = |t: f64| {
                let p: Vec<f64> = x.iter().zip(xd).map(|(a, b)| a + t * b).collect();
                map.jacobian(&p, &[]).unwrap().matvec(xd).unwrap()
            };
            let (plus, minus) = (at(h), at(-h));
            let got = map.curvature(x, xd, &[]).unwrap();
            for i in 0..got.len() {
                prop_assert!((got[i] - (plus[i] - minus[i]) / (2.0 * h)).abs() < 1e-5, "{map:?}");
            }
            let ev = map.evaluate(x, xd, &[]).unwrap();
            let yd = map.jacobian(x, &[]).unwrap().matvec(xd).unwrap();
            prop_assert_eq!(ev.yd, yd);
        }
    }
}

#[test]
fn distance_at_the_centre_is_singular() {
    let map = TaskMap::distance_to_point(&[1.0, 1.0], 0.2);
    assert!(map.jacobian(&[1.0, 1.0], &[]).is_err());
}

#[test]
fn wrong_input_size_is_rejected() {
    let map = TaskMap::identity(2);
    assert!(map.eval(&[1.0, 2.0, 3.0], &[]).is_err());
    assert!(TaskMap::compose(TaskMap::identity(3), TaskMap::goal_offset(&[0.0, 0.0])).is_err());
}
