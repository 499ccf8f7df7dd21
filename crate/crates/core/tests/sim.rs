use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmpfusion::experiment::{evaluate, policy_batch_loss};
use rmpfusion::fixtures;
use rmpfusion::learn::Split;
use rmpfusion::sim::*;
use rmpfusion::tree::Tree;

fn small(name: &str) -> rmpfusion::experiment::Experiment {
    let mut exp = fixtures::experiment(name).unwrap();
    exp.config.train_data = DatasetCounts {
        envs: 2,
        traj_per_env: 3,
        points_per_traj: 10,
    };
    exp.config.test_data = DatasetCounts {
        envs: 1,
        traj_per_env: 4,
        points_per_traj: 10,
    };
    exp
}

#[test]
fn generation_is_deterministic_and_counts_are_exact() {
    let exp = small("2d2level");
    let bytes = |seed: u64| {
        let mut e = exp.clone();
        e.config.seed = seed;
        let (d, summary) = e.generate(Split::Train).unwrap();
        assert_eq!(d.len(), 60);
        assert_eq!(summary.records, 60);
        assert_eq!(summary.trajectories, 6);
        assert_eq!(summary.env_digests.len(), 2);
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        buf
    };
    assert_eq!(bytes(5), bytes(5));
    assert_ne!(bytes(5), bytes(6));
}

#[test]
fn expert_reproduces_its_own_dataset() {
    for name in fixtures::EXPERIMENTS {
        let exp = small(name);
        let (test, _) = exp.generate(Split::Test).unwrap();
        assert!(test.records.iter().all(|r| r.split == Split::Test));
        let loss = policy_batch_loss(&exp.expert_policy(), &test.records).unwrap();
        assert!(loss <= 1e-12, "{name}: {loss}");
    }
}

#[test]
fn report_rates_partition_the_rollouts() {
    let exp = small("2d1level");
    let (test, _) = exp.generate(Split::Test).unwrap();
    let ev = evaluate(&exp, "expert", &exp.expert_policy(), &test).unwrap();
    let r = &ev.report;
    assert_eq!(r.rollouts, 4);
    assert!((r.completion_rate + r.collision_rate + r.timeout_rate - 1.0).abs() < 1e-12);
    assert_eq!(r.completion_rate, 1.0);
    assert!(r.online_loss <= 1e-12 && r.batch_loss <= 1e-12);
    for ratio in r.metric_ratios.all() {
        assert!((ratio - 1.0).abs() < 1e-12);
    }
    assert!(r.max_v_increment.unwrap() <= 1e-9);
}

#[test]
fn zero_policy_drifts_into_an_obstacle_or_times_out() {
    let robot = Robot::Point2d;
    let bounds = Bounds { min: [-5.0, -5.0], max: [5.0, 5.0] };
    let env = Environment::new(robot, bounds, [3.0, 3.0], vec![Obstacle { center: [0.0, 0.0], radius: 0.5 }]).unwrap();
    let cfg = RolloutConfig { horizon: 3.0, ..RolloutConfig::default() };
    let zero = ZeroPolicy { dim: 2 };
    let hit = rollout(&zero, &env, &[-2.0, 0.0], &[1.0, 0.0], &cfg).unwrap();
    assert_eq!(hit.outcome(), Outcome::Collision);
    let t = hit.events.collision.unwrap();
    assert!((t - 1.5).abs() <= cfg.dt + 1e-9, "{t}");
    let miss = rollout(&zero, &env, &[-2.0, 2.0], &[0.1, 0.0], &cfg).unwrap();
    assert_eq!(miss.outcome(), Outcome::Timeout);
    let inside = rollout(&zero, &env, &[0.0, 0.1], &[0.0, 0.0], &cfg).unwrap();
    assert_eq!(inside.events.collision, Some(0.0));
    assert_eq!(inside.samples.len(), 1);
    assert!(rollout(&zero, &env, &[6.0, 0.0], &[0.0, 0.0], &cfg).is_err());
}

/// Error against a fine reference at two step sizes gives the order.
fn observed_order(method: Method) -> f64 {
    let policy = TreePolicy::new(Tree::new(fixtures::tree_spec("ytree").unwrap()).unwrap(), vec![]).unwrap();
    let run = |dt: f64| {
        let (mut q, mut qd) = (vec![0.4, -0.7], vec![0.5, 0.3]);
        for _ in 0..(0.5 / dt).round() as usize {
            (q, qd) = integrate_step(&policy, &q, &qd, &[], dt, method).unwrap();
        }
        q
    };
    let reference = run(1e-4);
    let err = |dt: f64| {
        let q = run(dt);
        ((q[0] - reference[0]).powi(2) + (q[1] - reference[1]).powi(2)).sqrt()
    };
    (err(0.02) / err(0.01)).log2()
}

#[test]
fn integrators_have_their_nominal_order() {
    let euler = observed_order(Method::Euler);
    let rk4 = observed_order(Method::Rk4);
    assert!((euler - 1.0).abs() < 0.2, "{euler}");
    assert!((rk4 - 4.0).abs() < 0.4, "{rk4}");
}

#[test]
fn trajectory_files_round_trip() {
    let exp = small("arm3");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let env = sample_env(&exp.config.sampling, &mut rng).unwrap();
    let (q0, qd0) = sample_start(&env, &exp.config.sampling, &mut rng).unwrap();
    let traj = rollout(&exp.expert_policy(), &env, &q0, &qd0, &exp.config.rollout).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    traj.save(&path).unwrap();
    let back = Trajectory::load(&path).unwrap();
    assert_eq!(back.samples, traj.samples);
    std::fs::write(&path, "").unwrap();
    assert!(Trajectory::load(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampled_environments_respect_the_sampling_rules(seed in any::<u64>()) {
        for name in fixtures::EXPERIMENTS {
            let cfg = fixtures::experiment_config(name).unwrap().sampling;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let env = sample_env(&cfg, &mut rng).unwrap();
            prop_assert_eq!(env.obstacles.len(), cfg.obstacles);
            for (i, o) in env.obstacles.iter().enumerate() {
                prop_assert!(o.radius >= cfg.radius[0] && o.radius <= cfg.radius[1]);
                let d = ((o.center[0] - env.goal[0]).powi(2) + (o.center[1] - env.goal[1]).powi(2)).sqrt();
                prop_assert!(d - o.radius >= cfg.goal_clearance - 1e-12);
                for p in &env.obstacles[i + 1..] {
                    let gap = ((o.center[0] - p.center[0]).powi(2) + (o.center[1] - p.center[1]).powi(2)).sqrt()
                        - o.radius - p.radius;
                    prop_assert!(gap >= cfg.obstacle_gap - 1e-12);
                }
            }
            let back = cfg.environment_from_aux(&env.aux()).unwrap();
            prop_assert_eq!(back.digest(), env.digest());
            let (q0, qd0) = sample_start(&env, &cfg, &mut rng).unwrap();
            prop_assert!(env.admits(&q0));
            prop_assert!(env.signed_distance(&q0) >= cfg.start_clearance - 1e-12);
            prop_assert!(qd0.iter().all(|v| v.abs() <= cfg.start_speed));
        }
    }
}
