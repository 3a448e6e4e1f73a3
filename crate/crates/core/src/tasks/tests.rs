use proptest::prelude::*;

use super::*;
use crate::manifolds::spd::min_eigenvalue;

#[test]
fn zero_noise_strokes_are_identical() {
    let ds = gen_strokes(StrokeShape::L, 2, 0.0, 3).unwrap();
    assert_eq!(ds.demos[0], ds.demos[1]);
    assert_eq!(ds.demos[0].len(), STROKE_LEN);
    // Corner of the L is on the trace.
    assert!(ds.demos[0].iter().any(|p| (p[0] + 0.6).abs() < 0.05 && (p[1] + 0.6).abs() < 0.05));
}

#[test]
fn strokes_stay_in_bounds_and_are_reproducible() {
    for shape in [StrokeShape::L, StrokeShape::S, StrokeShape::TwoMode] {
        let a = gen_strokes(shape, 30, 0.3, 11).unwrap();
        let b = gen_strokes(shape, 30, 0.3, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.demos.iter().flatten().all(|p| p.iter().all(|c| c.abs() <= BOUND)));
        assert!(a.demos.iter().all(|d| d.len() == STROKE_LEN));
    }
    assert!(gen_strokes(StrokeShape::S, 0, 0.1, 0).is_err());
}

#[test]
fn two_mode_midpoints_form_two_clusters() {
    let ds = gen_strokes(StrokeShape::TwoMode, 40, 0.05, 5).unwrap();
    let mids = stroke_midpoints(&ds);
    // Two-means oracle seeded with the extreme points in y.
    let lo = mids.iter().cloned().fold([0.0, f64::INFINITY], |a, p| if p[1] < a[1] { p } else { a });
    let hi = mids.iter().cloned().fold([0.0, f64::NEG_INFINITY], |a, p| if p[1] > a[1] { p } else { a });
    let mut c = [lo, hi];
    for _ in 0..10 {
        let mut sum = [[0.0; 2]; 2];
        let mut cnt = [0usize; 2];
        for p in &mids {
            let d = |q: [f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]);
            let k = usize::from(d(c[1]) < d(c[0]));
            sum[k][0] += p[0];
            sum[k][1] += p[1];
            cnt[k] += 1;
        }
        for k in 0..2 {
            assert!(cnt[k] > 0);
            c[k] = [sum[k][0] / cnt[k] as f64, sum[k][1] / cnt[k] as f64];
        }
    }
    assert!((c[0][0] - c[1][0]).hypot(c[0][1] - c[1][1]) > 0.5);
}

#[test]
fn stereographic_examples() {
    let close = |a: &Point, b: &[f64]| a.0.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
    assert!(close(&stereographic_to_sphere([0.0, 0.0], 1.0), &[0.0, 0.0, 1.0]));
    assert!(close(&stereographic_to_sphere([1.0, 0.0], 1.0), &[1.0, 0.0, 0.0]));
    assert!(close(&stereographic_to_sphere([0.5, 0.5], 1.0), &[2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]));
    assert!(close(&stereographic_to_sphere([1.5, 0.0], BOUND), &[1.0, 0.0, 0.0]));
}

#[test]
fn stereographic_grid_roundtrip() {
    let n = 61;
    for i in 0..n {
        for j in 0..n {
            let p = [-1.5 + 3.0 * i as f64 / (n - 1) as f64, -1.5 + 3.0 * j as f64 / (n - 1) as f64];
            let x = stereographic_to_sphere(p, BOUND);
            assert!((x.0.iter().map(|c| c * c).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12);
            let q = sphere_to_stereographic(&x, BOUND).unwrap();
            assert!((q[0] - p[0]).abs() <= 1e-10 && (q[1] - p[1]).abs() <= 1e-10);
        }
    }
}

#[test]
fn sphere_strokes_satisfy_sphere_invariants() {
    let ds = gen_strokes(StrokeShape::L, 10, 0.2, 1).unwrap().to_dataset(true);
    ds.validate().unwrap();
    let s2 = ManifoldSpec::sphere(2);
    for d in &ds.demos {
        for a in &d.actions {
            s2.check_point(a).unwrap();
        }
    }
}

#[test]
fn spd_dataset_properties() {
    let spec = ManifoldSpec::spd(2);
    for p in gen_spd_points(50, 0.0, 4).unwrap() {
        // Zero jitter: the point is the curve point at some u; recover u from the eigenvalue.
        let l1 = 0.5 * (p.0[0] + p.0[3] + ((p.0[0] - p.0[3]).powi(2) + 4.0 * p.0[1] * p.0[1]).sqrt());
        let u = l1 - 1.5;
        assert!(spec.distance(&p, &spd_curve(u)).unwrap() < 1e-7);
    }
    let a = gen_spd_dataset(100, 9).unwrap();
    assert_eq!(a, gen_spd_dataset(100, 9).unwrap());
    assert!(a.iter().all(|p| min_eigenvalue(2, &p.0) > 0.0));
}

#[test]
fn reach_examples() {
    let cfg = ReachConfig::default();
    let mut env = ReachEnv::with_positions(cfg.clone(), [0.0, 0.0], [0.5, 0.5]).unwrap();
    let r = env.step(&Point(vec![0.5, 0.5])).unwrap();
    assert!(r.done);
    assert_eq!(r.score, 1.0);
    assert!(matches!(env.step(&Point(vec![0.0, 0.0])), Err(Error::Protocol(_))));

    let mut env = ReachEnv::with_positions(cfg, [0.0, 0.0], [0.5, 0.5]).unwrap();
    let mut last = None;
    while !env.done {
        last = Some(env.step(&Point(vec![0.0, 0.0])).unwrap());
    }
    assert_eq!(env.steps, 60);
    assert_eq!(last.unwrap().score, 0.0);

    let cfg = ReachConfig { sphere: true, ..ReachConfig::default() };
    let mut env = ReachEnv::new(cfg, 3).unwrap();
    let r = env.step(&Point(vec![3.0, -1.0, 0.5])).unwrap();
    assert!((r.obs[..3].iter().map(|c| c * c).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
}

#[test]
fn reach_demos_replay_to_success() {
    for sphere in [false, true] {
        let cfg = ReachConfig { sphere, ..ReachConfig::default() };
        for seed in 0..20 {
            let mut env = ReachEnv::new(cfg.clone(), seed).unwrap();
            let demo = reach_demo(&env, 4);
            assert_eq!(demo.obs[0], env.observation());
            for a in &demo.actions[2..] {
                if env.done {
                    break;
                }
                env.step(a).unwrap();
            }
            assert!(env.success(), "seed {seed} sphere {sphere}");
        }
    }
}

#[test]
fn dataset_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = [
        TaskConfig::Strokes { shape: StrokeShape::S, n_demos: 5, noise: 0.1, sphere: true },
        TaskConfig::Spd { n: 20, jitter: 0.05 },
        TaskConfig::Reach { n_demos: 4, pad: 3, env: ReachConfig::default() },
    ];
    for task in tasks {
        let ds = task.generate(7).unwrap();
        let path = dir.path().join("d.csv");
        save_dataset(&path, &ds, task.name(), 7).unwrap();
        let (h, back) = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(h.seed, 7);
        assert_eq!(dataset_to_string(&back, task.name(), 7), std::fs::read_to_string(&path).unwrap());
    }
}

#[test]
fn malformed_dataset_files_are_rejected() {
    let ds = TaskConfig::Spd { n: 3, jitter: 0.0 }.generate(1).unwrap();
    let text = dataset_to_string(&ds, "spd", 1);
    let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    assert!(matches!(parse_dataset(cut.as_bytes()), Err(Error::Format(_))));
    let bad = text.replace("\"spec\":\"SPD2\"", "\"spec\":\"S\"");
    assert!(parse_dataset(bad.as_bytes()).is_err());
}

proptest! {
    #[test]
    fn stereographic_roundtrip_random(u in -1.5f64..1.5, v in -1.5f64..1.5) {
        let q = sphere_to_stereographic(&stereographic_to_sphere([u, v], BOUND), BOUND).unwrap();
        prop_assert!((q[0] - u).abs() <= 1e-10 && (q[1] - v).abs() <= 1e-10);
    }
}
