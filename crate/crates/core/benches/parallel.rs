use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ebif::control::{steer_optimize, SteerOptions, SteeringProblem};
use ebif::engine::{ebif_run, extract_bilinear, BilinearRealization, ConstantMode, EbifConfig, NonlinearSystem};
use ebif::io::SystemFile;
use ebif::reach::{adjoint_chain_for, reach_sample, DEFAULT_RANK_TOL};
use ebif::Execution;

fn realize(sys: &NonlinearSystem, cfg: &EbifConfig) -> BilinearRealization {
    extract_bilinear(sys, &ebif_run(sys, cfg).unwrap(), cfg).unwrap()
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn reach(c: &mut Criterion) {
    let file = SystemFile::load(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/example5.json"))).unwrap();
    let real = realize(&file.to_system().unwrap(), &file.default_config().unwrap());
    let span = adjoint_chain_for(&real, DEFAULT_RANK_TOL).unwrap();
    let mut group = c.benchmark_group("reach_sample");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::new(name, 20_000), &exec, |b, &exec| {
            b.iter(|| reach_sample(&real, &span, &[0.1, 0.1], 1.0, 2.0, 20_000, 42, exec).unwrap())
        });
    }
    group.finish();
}

fn steer(c: &mut Criterion) {
    let sys = NonlinearSystem::parse("unicycle", 3, &["0", "0", "0"], &[vec!["cos(x3)", "sin(x3)", "0"], vec!["0", "0", "1"]]).unwrap();
    let real = realize(&sys, &EbifConfig::coordinates(3).with_mode(ConstantMode::Augment));
    let prob = SteeringProblem {
        x0: vec![0.2, -0.4, 1.0],
        target: vec![-0.6, 0.7, -2.0],
        horizon: 5.0,
        segments: 6,
        u_bound: None,
    };
    let mut group = c.benchmark_group("steer_multistart");
    group.sample_size(10);
    for (name, exec) in modes() {
        let opts = SteerOptions { exec, ..Default::default() };
        group.bench_with_input(BenchmarkId::new(name, opts.starts), &opts, |b, opts| {
            b.iter(|| steer_optimize(&real, &prob, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, reach, steer);
criterion_main!(benches);
