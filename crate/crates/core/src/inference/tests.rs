use std::f64::consts::FRAC_PI_2;

use super::*;
use crate::distributions::rng_from_seed;
use crate::flows::{rcfm_conditional_field, stable_field};
use crate::manifolds::spd::min_eigenvalue;
use crate::nnet::ModelConfig;

fn p(v: &[f64]) -> Point {
    Point(v.to_vec())
}

fn aug(v: &[f64], tau: f64) -> AugmentedState {
    AugmentedState::new(p(v), tau)
}

#[test]
fn zero_field_keeps_start() {
    let s2 = ManifoldSpec::sphere(2);
    let x0 = p(&[0.0, 0.6, 0.8]);
    let traj = integrate_projected_euler(&s2, |x, _| Ok(s2.zero_tangent(x)), &x0, &IntegratorConfig::uniform(5, 1.0)).unwrap();
    assert_eq!(traj.len(), 6);
    assert!(traj.states.iter().all(|x| *x == x0));
}

#[test]
fn euclidean_stable_recursion() {
    let r2 = ManifoldSpec::euclidean(2);
    let (x0, x1) = (p(&[3.0, -1.0]), p(&[0.0, 2.0]));
    let lambda = 2.5;
    for (n, t_end) in [(4, 1.0), (10, 2.0), (3, 0.3)] {
        let dt: f64 = t_end / n as f64;
        let traj = integrate_projected_euler(
            &r2,
            |x, _| Ok(Tangent::new(x.clone(), x.0.iter().zip(&x1.0).map(|(a, b)| lambda * (b - a)).collect())),
            &x0,
            &IntegratorConfig::uniform(n, t_end),
        )
        .unwrap();
        for (k, x) in traj.states.iter().enumerate() {
            let c = (1.0 - lambda * dt).powi(k as i32);
            for i in 0..2 {
                assert!((x.0[i] - x1.0[i] - c * (x0.0[i] - x1.0[i])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn quarter_circle_single_step() {
    let s2 = ManifoldSpec::sphere(2);
    let x0 = p(&[1.0, 0.0, 0.0]);
    let traj = integrate_projected_euler(
        &s2,
        |x, _| Ok(Tangent::new(x.clone(), vec![0.0, FRAC_PI_2, 0.0])),
        &x0,
        &IntegratorConfig::uniform(1, 1.0),
    )
    .unwrap();
    assert!(s2.distance(traj.last(), &p(&[0.0, 1.0, 0.0])).unwrap() < 1e-15);
}

#[test]
fn stable_first_step_lands_on_target() {
    let params = FlowParams::default();
    let config = IntegratorConfig { nfe: 1, ..IntegratorConfig::default() };
    let r2 = ManifoldSpec::euclidean(2);
    let xi1 = aug(&[0.0, 2.0], 1.0);
    let traj = integrate_srfmp(&r2, |xi| stable_field(&r2, xi, &xi1, &params), &aug(&[3.0, -1.0], 0.0), &params, &config).unwrap();
    assert_eq!(traj.len(), 2);
    assert_eq!(traj.states[1].spatial.0, vec![0.0, 2.0]);
    assert_eq!(traj.times, vec![0.0, 0.4]);

    let s2 = ManifoldSpec::sphere(2);
    let xi1 = aug(&[0.0, 1.0, 0.0], 1.0);
    let traj = integrate_srfmp(&s2, |xi| stable_field(&s2, xi, &xi1, &params), &aug(&[1.0, 0.0, 0.0], 0.0), &params, &config).unwrap();
    assert!(s2.distance(&traj.states[1].spatial, &xi1.spatial).unwrap() <= 1e-10);

    let spd2 = ManifoldSpec::spd(2);
    let xi1 = aug(&[2.0, 0.3, 0.3, 0.5], 1.0);
    let traj = integrate_srfmp(&spd2, |xi| stable_field(&spd2, xi, &xi1, &params), &aug(&[1.0, -0.2, -0.2, 1.5], 0.0), &params, &config).unwrap();
    assert!(spd2.distance(&traj.states[1].spatial, &xi1.spatial).unwrap() <= 1e-10);
}

#[test]
fn stable_schedule_shapes() {
    let params = FlowParams::default();
    let cfg = IntegratorConfig { nfe: 4, ..IntegratorConfig::default() };
    let sched = cfg.schedule(FlowMode::Srfmp, &params);
    assert_eq!(sched[0], 0.4);
    assert!(sched[1..].iter().all(|d| (d - 0.2).abs() < 1e-15));
    let fixed = IntegratorConfig { refine_step: Some(0.1), t_end: 7.0, ..cfg.clone() };
    assert_eq!(fixed.schedule(FlowMode::Srfmp, &params), vec![0.4, 0.1, 0.1, 0.1]);
    let long = IntegratorConfig { t_end: 2.0, nfe: 10, ..cfg.clone() };
    assert!((long.schedule(FlowMode::Srfmp, &params).iter().sum::<f64>() - 2.0).abs() < 1e-12);
    assert_eq!(IntegratorConfig { t_end: 3.0, ..cfg.clone() }.schedule(FlowMode::Srfmp, &params), vec![0.4; 4]);
    assert_eq!(IntegratorConfig { nfe: 1, ..cfg.clone() }.schedule(FlowMode::Srfmp, &params), vec![0.4]);
    assert_eq!(cfg.schedule(FlowMode::Rfmp, &params), vec![0.25; 4]);
    assert_eq!(nfe_for_horizon(1.0, &params, 0.1), 7);
    assert_eq!(nfe_for_horizon(2.0, &params, 0.1), 17);
    assert_eq!(nfe_for_horizon(0.3, &params, 0.1), 1);
    assert!(IntegratorConfig { nfe: 0, ..cfg.clone() }.validate(&params).is_err());
    assert!(IntegratorConfig { refine_step: Some(0.5), ..cfg }.validate(&params).is_err());
}

#[test]
fn iterates_stay_on_manifold() {
    let params = FlowParams::default();
    let mut rng = rng_from_seed(2);
    for s in ["S2", "S3", "SPD2", "R3xS3xR1"] {
        let spec: ManifoldSpec = s.parse().unwrap();
        let prior = Prior::default_for(&spec);
        for _ in 0..10 {
            let (x0, x1) = (prior.sample(&mut rng), prior.sample(&mut rng));
            let traj = integrate_projected_euler(
                &spec,
                |x, t| rcfm_conditional_field(&spec, x, t.min(0.999), &x0, &x1),
                &x0,
                &IntegratorConfig::uniform(7, 1.0),
            )
            .unwrap();
            let xi1 = aug(&x1.0, 1.0);
            let straj = integrate_srfmp(&spec, |xi| stable_field(&spec, xi, &xi1, &params), &aug(&x0.0, 0.0), &params, &IntegratorConfig::default()).unwrap();
            for x in traj.states.iter().chain(straj.states.iter().map(|s| &s.spatial)) {
                spec.check_point(x).unwrap();
                for (f, r) in spec.factor_ranges() {
                    match f {
                        crate::manifolds::Factor::Sphere(_) => {
                            let n: f64 = x.0[r].iter().map(|c| c * c).sum::<f64>().sqrt();
                            assert!((n - 1.0).abs() <= 1e-9);
                        }
                        crate::manifolds::Factor::Spd(n) => assert!(min_eigenvalue(n, &x.0[r]) > 0.0),
                        _ => {}
                    }
                }
            }
        }
    }
}

#[test]
fn exact_rcfm_field_recovers_target() {
    let s3 = ManifoldSpec::sphere(3);
    let prior = Prior::default_for(&s3);
    let mut rng = rng_from_seed(5);
    for _ in 0..50 {
        let (x0, x1) = (prior.sample(&mut rng), prior.sample(&mut rng));
        let d = s3.distance(&x0, &x1).unwrap();
        if d > 3.0 {
            continue;
        }
        let traj = integrate_projected_euler(&s3, |x, t| rcfm_conditional_field(&s3, x, t, &x0, &x1), &x0, &IntegratorConfig::uniform(100, 1.0)).unwrap();
        assert!(s3.distance(traj.last(), &x1).unwrap() <= 0.02 * d);
    }
}

#[test]
fn refinement_is_idempotent_at_target() {
    let params = FlowParams::default();
    let s2 = ManifoldSpec::sphere(2);
    let xi1 = aug(&[0.0, 0.6, 0.8], 1.0);
    let traj = integrate_srfmp(&s2, |xi| stable_field(&s2, xi, &xi1, &params), &xi1, &params, &IntegratorConfig { nfe: 20, ..IntegratorConfig::default() }).unwrap();
    for w in traj.states.windows(2).skip(1) {
        assert!(s2.distance(&w[0].spatial, &w[1].spatial).unwrap() <= 1e-10);
    }
}

#[test]
fn stable_field_is_robust_to_horizon_and_rcfm_is_not() {
    let params = FlowParams::default();
    let mut rng = rng_from_seed(6);
    let s2 = ManifoldSpec::sphere(2);
    let prior = Prior::default_for(&s2);
    let eps = 0.1;
    for _ in 0..20 {
        let (x0, x1) = (prior.sample(&mut rng), prior.sample(&mut rng));
        let d = s2.distance(&x0, &x1).unwrap();
        if !(0.2..2.0).contains(&d) {
            continue;
        }
        let xi1 = aug(&x1.0, 1.0);
        let end = |t_end: f64| {
            let cfg = IntegratorConfig { nfe: nfe_for_horizon(t_end, &params, eps), refine_step: Some(eps), ..IntegratorConfig::default() };
            integrate_srfmp(&s2, |xi| stable_field(&s2, xi, &xi1, &params), &aug(&x0.0, 0.0), &params, &cfg).unwrap().last().spatial.clone()
        };
        assert!(s2.distance(&end(1.0), &end(2.0)).unwrap() <= 1e-8);
        let rend = |t_end: f64| {
            integrate_projected_euler(&s2, |x, t| rcfm_conditional_field(&s2, x, t, &x0, &x1), &x0, &IntegratorConfig::uniform((100.0 * t_end) as usize, t_end))
                .unwrap()
                .last()
                .clone()
        };
        assert!(s2.distance(&rend(1.0), &rend(2.0)).unwrap() > 0.5 * d);
    }
}

fn policy_model(spec: &str, t_p: usize, obs_dim: usize, mode: FlowMode) -> VectorFieldModel {
    let mut rng = rng_from_seed(1);
    let cfg = ModelConfig { hidden: vec![16], embedding_dim: 4, ..ModelConfig::default() };
    let mut m = VectorFieldModel::new(&spec.parse().unwrap(), t_p, 2 * obs_dim, mode, FlowParams::default(), &cfg, &mut rng).unwrap();
    let params: Vec<f64> = (0..m.num_params()).map(|_| rand::Rng::random_range(&mut rng, -0.5..0.5)).collect();
    m.set_params(&params).unwrap();
    m
}

#[test]
fn policy_returns_action_horizon() {
    let policy = PolicyConfig::default();
    for mode in [FlowMode::Rfmp, FlowMode::Srfmp] {
        let model = policy_model("R2", 16, 3, mode);
        let prior = Prior::default_for(model.action_spec());
        let history = vec![vec![0.1, 0.2, 0.3], vec![0.2, 0.1, 0.0], vec![0.4, 0.4, 0.4]];
        let act = |seed| policy_act(&model, &history, &policy, &IntegratorConfig::default(), &prior, &mut rng_from_seed(seed)).unwrap();
        let a = act(3);
        assert_eq!(a.len(), 8);
        assert_eq!(a, act(3));
        assert!(matches!(
            policy_act(&model, &history[..1], &policy, &IntegratorConfig::default(), &prior, &mut rng_from_seed(0)),
            Err(Error::Precondition(_))
        ));
    }
}

#[test]
fn product_policy_keeps_unit_quaternions() {
    let policy = PolicyConfig { t_p: 4, t_a: 2, t_o: 2, unconditional: false };
    let model = policy_model("R3xS3xR1", 4, 2, FlowMode::Srfmp);
    let prior = Prior::default_for(model.action_spec());
    let history = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    for seed in 0..10 {
        for a in policy_act(&model, &history, &policy, &IntegratorConfig::default(), &prior, &mut rng_from_seed(seed)).unwrap() {
            let n: f64 = a.0[3..7].iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn jerkiness_examples() {
    let r1 = ManifoldSpec::euclidean(1);
    let seq = |f: &dyn Fn(f64) -> f64| (0..8).map(|i| p(&[f(i as f64)])).collect::<Vec<_>>();
    assert_eq!(jerkiness(&r1, &seq(&|_| 2.0), 1.0).unwrap(), 0.0);
    assert_eq!(jerkiness(&r1, &seq(&|t| 3.0 * t * t - t), 1.0).unwrap(), 0.0);
    assert_eq!(jerkiness(&r1, &seq(&|t| t * t * t), 1.0).unwrap(), 36.0);
    assert!((jerkiness(&r1, &seq(&|t| t * t * t), 0.5).unwrap() - 36.0 * 64.0).abs() < 1e-9);
    assert!(jerkiness(&r1, &seq(&|t| t)[..3], 1.0).is_err());
    // Sphere coordinates are ignored.
    let spec: ManifoldSpec = "R1xS2".parse().unwrap();
    let s: Vec<Point> = (0..5).map(|i| p(&[0.0, (i as f64).cos(), (i as f64).sin(), 0.0])).collect();
    assert_eq!(jerkiness(&spec, &s, 1.0).unwrap(), 0.0);
}

#[test]
fn trajectory_rows_format() {
    let traj = Trajectory { times: vec![0.0, 0.5], states: vec![p(&[1.0, 2.0]), p(&[1.5, -0.25])] };
    assert_eq!(trajectory_rows(3, &traj), "3,0,0,1,2\n3,1,0.5,1.5,-0.25\n");
}
