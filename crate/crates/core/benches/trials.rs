use criterion::{criterion_group, criterion_main, Criterion};
use otfs_pdma::harness::{run_experiment_with, Execution, ExperimentSpec, Profile, Scenario};

fn spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(Scenario::ParamCapture, Profile::Desk);
    spec.trials = 8;
    spec.snr_db = vec![10.0, 20.0];
    spec
}

fn trials(c: &mut Criterion) {
    let spec = spec();
    let mut group = c.benchmark_group("param_capture_8_trials");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| run_experiment_with(&spec, Execution::Parallel).unwrap()));
    group.bench_function("sequential", |b| b.iter(|| run_experiment_with(&spec, Execution::Sequential).unwrap()));
    group.finish();
}

criterion_group!(benches, trials);
criterion_main!(benches);
