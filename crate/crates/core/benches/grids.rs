//! Grid-parallel workloads, benchmarked under the build's execution mode.
//!
//! `cargo bench -p ddfilt` measures the rayon build (plus a one-thread
//! pool for reference); `cargo bench -p ddfilt --no-default-features`
//! measures the sequential fallback under the same benchmark ids.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ddfilt::coherence::{decoherence_curve, monte_carlo_error, CurveOptions, Strategy};
use ddfilt::optimize::{build_ofdd_set, OptimizerConfig, TauGrid};
use ddfilt::sequence::udd_deltas;
use ddfilt::{par, FilterEvalContext, NoiseSpectrum};

fn mode() -> &'static str {
    if par::is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

/// Execution contexts to compare: the build's default, and for parallel
/// builds a single-thread pool.
struct Pool {
    label: &'static str,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Pool {
    fn all() -> Vec<Pool> {
        #[allow(unused_mut)]
        let mut v = vec![Pool {
            label: mode(),
            #[cfg(feature = "parallel")]
            pool: None,
        }];
        #[cfg(feature = "parallel")]
        v.push(Pool {
            label: "rayon-1-thread",
            pool: Some(rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        });
        v
    }

    fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if let Some(p) = &self.pool {
            return p.install(f);
        }
        f()
    }
}

fn curves(c: &mut Criterion) {
    let spectrum = NoiseSpectrum::ohmic(1.0);
    let grid: Vec<f64> = (1..=300).map(|i| i as f64 * 0.1).collect();
    let opts = CurveOptions::default();
    let mut g = c.benchmark_group("udd_curve_n6_300pts");
    for p in Pool::all() {
        g.bench_function(BenchmarkId::from_parameter(p.label), |b| {
            b.iter(|| p.run(|| decoherence_curve(&spectrum, Strategy::Udd, 6, black_box(&grid), None, &opts).unwrap()))
        });
    }
    g.finish();

    let set = build_ofdd_set(6, 0.0, &OptimizerConfig { grid: TauGrid::new(0.01, 30.0, 300), ..Default::default() })
        .unwrap()
        .set;
    let grid: Vec<f64> = (1..=24).map(|i| i as f64 * 0.5).collect();
    let mut g = c.benchmark_group("lodd_curve_n6_24pts");
    g.sample_size(10);
    for p in Pool::all() {
        g.bench_function(BenchmarkId::from_parameter(p.label), |b| {
            b.iter(|| {
                p.run(|| decoherence_curve(&spectrum, Strategy::Lodd, 6, black_box(&grid), Some(&set), &opts).unwrap())
            })
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let spectrum = NoiseSpectrum::ohmic(1.0);
    let ctx = FilterEvalContext::new(udd_deltas(2), 5.0, 0.0).unwrap();
    let mut g = c.benchmark_group("monte_carlo_2000");
    g.sample_size(10);
    for p in Pool::all() {
        g.bench_function(BenchmarkId::from_parameter(p.label), |b| {
            b.iter(|| p.run(|| monte_carlo_error(&spectrum, &ctx, 2000, black_box(1)).unwrap()))
        });
    }
    g.finish();
}

// Continuation is inherently sequential; kept as a reference point.
fn continuation(c: &mut Criterion) {
    let cfg = OptimizerConfig { grid: TauGrid::new(0.01, 30.0, 100), ..Default::default() };
    let mut g = c.benchmark_group("ofdd_build_n6_100pts");
    g.sample_size(10);
    g.bench_function(BenchmarkId::from_parameter(mode()), |b| {
        b.iter(|| build_ofdd_set(6, 0.0, black_box(&cfg)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, curves, oracle, continuation);
criterion_main!(benches);
