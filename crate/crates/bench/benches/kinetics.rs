//! Benchmarks for the three hot paths: closed-form curve evaluation,
//! the event-driven simulator, and gate statistics over a detection train.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};

use twinpoint::analytic::log_gate_grid;
use twinpoint::estimator::{feynman_from_train, GateMode, Window};
use twinpoint::fitting::fit_feynman;
use twinpoint::presets::{analytic_params, sim_params, Setup};
use twinpoint::simulator::{run_ensemble, SimConfig};
use twinpoint::{feynman_curve_canonical, feynman_curve_published};

fn bench_closed_form(c: &mut Criterion) {
    let params = analytic_params(Setup::Ddsi500);
    let gates = log_gate_grid(1e-3, 1e3, 64);
    let mut group = c.benchmark_group("closed_form_curve");
    group.throughput(Throughput::Elements(gates.len() as u64));
    group.bench_function("canonical_64_gates", |b| {
        b.iter(|| feynman_curve_canonical(black_box(&params), black_box(&gates)).unwrap())
    });
    group.bench_function("published_64_gates", |b| {
        b.iter(|| feynman_curve_published(black_box(&params), black_box(&gates)).unwrap())
    });
    group.finish();
}

fn bench_simulator(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulator");
    group.sample_size(10);
    for setup in [Setup::Ddsi500, Setup::Ddaa500] {
        let config = SimConfig {
            params: sim_params(setup),
            t_warmup: Some(10.0),
            t_record: 50.0,
            seed: 42,
            max_population: 1_000_000,
            replicas: 1,
        };
        group.bench_function(BenchmarkId::new("replica_t50", setup.stem()), |b| {
            b.iter(|| run_ensemble(black_box(&config)).unwrap())
        });
    }
    group.finish();
}

/// Homogeneous Poisson train: the estimator's cost depends on event count
/// and gate count, not on correlations, so this is a faithful workload.
fn poisson_train(rate: f64, t_end: f64, seed: u64) -> Vec<f64> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut times = Vec::with_capacity((rate * t_end) as usize);
    let mut t = 0.0;
    loop {
        let u: f64 = rng.gen();
        t -= (1.0 - u).ln() / rate;
        if t >= t_end {
            return times;
        }
        times.push(t);
    }
}

fn bench_estimator(c: &mut Criterion) {
    let t_end = 1_000.0;
    let train = poisson_train(100.0, t_end, 7);
    let window = Window {
        start: 0.0,
        end: t_end,
    };
    let gates = log_gate_grid(0.01, 10.0, 16);
    let mut group = c.benchmark_group("gate_statistics");
    group.throughput(Throughput::Elements(train.len() as u64));
    for (name, mode) in [
        ("non_overlapping", GateMode::NonOverlapping),
        ("bunching", GateMode::Bunching),
    ] {
        group.bench_function(BenchmarkId::new(name, format!("{}_events", train.len())), |b| {
            b.iter(|| {
                feynman_from_train(black_box(&train), window, black_box(&gates), mode).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_fit(c: &mut Criterion) {
    let params = analytic_params(Setup::Ddsi500);
    let gates = log_gate_grid(1e-2, 1e2, 40);
    let curve = feynman_curve_canonical(&params, &gates).unwrap();
    c.bench_function("fit_two_exponential_40_points", |b| {
        b.iter(|| fit_feynman(black_box(&curve), None).unwrap())
    });
}

criterion_group!(
    benches,
    bench_closed_form,
    bench_simulator,
    bench_estimator,
    bench_fit
);
criterion_main!(benches);
