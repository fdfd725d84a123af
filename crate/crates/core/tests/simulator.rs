use pgbal::simulator::*;
use pgbal::Exec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `P(|Z| <= 3)` by Simpson's rule.
fn mass_within_three() -> f64 {
    let n = 10_000;
    let h = 6.0 / n as f64;
    let mut s = phi(-3.0) + phi(3.0);
    for i in 1..n {
        s += phi(-3.0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn truncated_normal_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 200_000;
    let xs: Vec<f64> = (0..n).map(|_| truncated_normal(&mut rng)).collect();
    assert!(xs.iter().all(|x| x.abs() <= TRUNCATION));
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // Var = 1 - 2 * 3 * phi(3) / P(|Z| <= 3)
    let want = 1.0 - 6.0 * phi(3.0) / mass_within_three();
    let se = (want / n as f64).sqrt();
    assert!(mean.abs() < 4.0 * se, "mean {mean}");
    assert!((var - want).abs() < 0.01, "var {var} vs {want}");
}

#[test]
fn calibrated_default_has_usable_patterns() {
    let s = Simulator::new(SimConfig::default()).unwrap();
    let d = s.generate(0);
    let n_cc = d.data.complete_rows().len() as f64 / d.data.n_rows() as f64;
    assert!((0.2..=0.6).contains(&n_cc), "complete share {n_cc}");
    for r in s.graph.nodes() {
        assert!(d.data.rows_of(r).len() >= 30, "{r}: {}", d.data.rows_of(r).len());
    }
    // patterns outside the graph never occur
    assert!(d.data.pattern_index().keys().all(|r| s.graph.contains(r)));
}

#[test]
fn replicates_are_reproducible() {
    let s = Simulator::new(SimConfig { n: 200, ..SimConfig::default() }).unwrap();
    assert_eq!(s.generate(3).data, s.generate(3).data);
    assert_ne!(s.generate(3).data, s.generate(4).data);
}

fn quick(methods: Vec<StudyMethod>, reps: usize) -> SimConfig {
    let mut cfg = SimConfig { n: 400, reps, methods, ..SimConfig::default() };
    cfg.fit.cv.grid_size = 6;
    cfg
}

#[test]
fn study_does_not_depend_on_scheduling() {
    let s = Simulator::new(quick(vec![StudyMethod::Full, StudyMethod::Cc, StudyMethod::True, StudyMethod::Seq], 3)).unwrap();
    let a = run_study(&s, Exec::Parallel).unwrap();
    let b = run_study(&s, Exec::Sequential).unwrap();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    StudyResult::write_csv(std::slice::from_ref(&a), &mut x).unwrap();
    StudyResult::write_csv(std::slice::from_ref(&b), &mut y).unwrap();
    assert_eq!(x, y);
    let full = a.method(StudyMethod::Full).unwrap();
    assert_eq!(full.n_ok, 3);
    assert!((full.mse_sum - full.mse.iter().sum::<f64>()).abs() < 1e-15);
    assert!((full.bias_l1 - full.bias.iter().map(|b| b.abs()).sum::<f64>()).abs() < 1e-15);
}

#[test]
fn sensitivity_fits_each_graph() {
    let mut cfg = quick(vec![StudyMethod::Full, StudyMethod::Seq], 2);
    cfg.fit_graphs = vec!["g1".into(), "g2".into(), "g3".into()];
    let s = Simulator::new(cfg).unwrap();
    let graphs = fit_graphs(&s).unwrap();
    let res = sensitivity_study(&s, &graphs, Exec::Parallel).unwrap();
    assert_eq!(res.len(), 3);
    // the graph-free row is shared
    assert_eq!(res[0].method(StudyMethod::Full), res[2].method(StudyMethod::Full));
    for r in &res {
        let seq = r.method(StudyMethod::Seq).unwrap();
        assert_eq!(seq.n_ok + seq.n_failed, 2);
        assert!(seq.mse.iter().all(|m| m.is_finite()));
    }
}

#[test]
fn configs_parse_from_toml_and_json() {
    let t = SimConfig::from_toml("n = 300\nreps = 4\nmethods = [\"full\", \"seq\"]\n[fit.cv]\ngrid_size = 5\n").unwrap();
    assert_eq!((t.n, t.reps, t.fit.cv.grid_size), (300, 4, 5));
    let j = SimConfig::from_json(r#"{"n": 300, "reps": 4, "methods": ["full", "seq"]}"#).unwrap();
    assert_eq!(j.methods, t.methods);
    assert!(SimConfig::from_toml("bogus = 1").is_err());
}
