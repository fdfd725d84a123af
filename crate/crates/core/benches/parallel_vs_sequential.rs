use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pgbal::optimizer::{cross_validate, CvOptions, LossKind, LossProblem, SolverOptions};
use pgbal::simulator::{run_study, SimConfig, Simulator, StudyMethod};
use pgbal::weights::{build_bases, fit_weights, FitOptions, WeightMethod};
use pgbal::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

/// The first odds problem of the default study's first replicate.
fn cv_problem() -> LossProblem {
    let sim = Simulator::new(SimConfig::default()).unwrap();
    let ds = sim.generate(0).data;
    let r = sim.graph.processing_order()[0];
    let spec = build_bases(&sim.graph, &ds, &Default::default()).unwrap().remove(&r).unwrap();
    let mut rows = ds.complete_rows().to_vec();
    let n_src = rows.len();
    rows.extend_from_slice(ds.rows_of(&r));
    let target = (0..rows.len()).map(|i| i >= n_src).collect();
    let design = spec.design(&ds, &rows).unwrap();
    LossProblem::unit(LossKind::Tailored, design, target, spec.t.clone(), ds.n_rows() as f64).unwrap()
}

fn bench_cv(c: &mut Criterion) {
    let p = cv_problem();
    let cv = CvOptions { grid_size: 10, ..CvOptions::default() };
    let mut group = c.benchmark_group("cross_validate");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cross_validate(&p, None, &cv, &SolverOptions::default(), exec).unwrap())
        });
    }
    group.finish();
}

fn bench_fit(c: &mut Criterion) {
    let sim = Simulator::new(SimConfig::default()).unwrap();
    let ds = sim.generate(0).data;
    let mut group = c.benchmark_group("fit_local_weights");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut opts = FitOptions { exec, ..sim.cfg.fit.clone() };
        opts.cv.grid_size = 10;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_weights(WeightMethod::Local, &sim.graph, &ds, &opts).unwrap())
        });
    }
    group.finish();
}

fn bench_study(c: &mut Criterion) {
    let cfg = SimConfig {
        n: 500,
        reps: 8,
        methods: vec![StudyMethod::Full, StudyMethod::Cc, StudyMethod::True, StudyMethod::Seq],
        ..SimConfig::default()
    };
    let sim = Simulator::new(cfg).unwrap();
    let mut group = c.benchmark_group("run_study");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_study(&sim, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_cv, bench_fit, bench_study);
criterion_main!(benches);
