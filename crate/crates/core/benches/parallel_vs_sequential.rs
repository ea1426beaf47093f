use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use salmut::exact::scan;
use salmut::harness::{run_experiment, Algorithm, ExperimentConfig};
use salmut::model::polynomial_queue;
use salmut::{benchmark_queue, Execution, PolynomialCost, QueueParams};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn scans(c: &mut Criterion) {
    let large = polynomial_queue(
        &QueueParams { servers: 10, buffer: 10, service_rate: 2.0, arrival_rates: vec![1.0, 2.0, 3.0] },
        &[30.0, 20.0, 10.0],
        PolynomialCost::default(),
    )
    .unwrap();
    let mut group = c.benchmark_group("scan");
    for (label, model) in [("benchmark", benchmark_queue(4.0)), ("w20_n3", large)] {
        for (mode, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(mode, label), &model, |b, m| b.iter(|| scan(m, exec).unwrap()));
        }
    }
    group.finish();
}

fn experiments(c: &mut Criterion) {
    let mut group = c.benchmark_group("experiment");
    group.sample_size(10);
    for (mode, exec) in MODES {
        let cfg = ExperimentConfig {
            algorithm: Algorithm::All,
            seeds: (0..10).collect(),
            max_iterations: 20_000,
            execution: exec,
            ..ExperimentConfig::default()
        };
        group.bench_function(mode, |b| b.iter(|| run_experiment(&cfg, None).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, scans, experiments);
criterion_main!(benches);
