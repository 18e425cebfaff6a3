use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use skewless_core::analysis::oracle_verdict;
use skewless_core::sim::{self, presets};
use skewless_core::sweep;
use skewless_core::topology::leader_loop;
use skewless_core::ProtocolParams;

fn wheel_metric(k: usize) -> f64 {
    let sc = presets::exp2(k, 4000, 11 + k as u64).unwrap();
    sim::run(&sc).unwrap().metrics.unwrap().sqrt_sn_us
}

fn tau_scan(tau: f64) -> bool {
    oracle_verdict(&leader_loop(0.7), &ProtocolParams::defaults(tau)).stable
}

fn bench_wheel(c: &mut Criterion) {
    let mut group = c.benchmark_group("wheel_sweep");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("sequential", 5), |b| {
        b.iter(|| sweep::map_sequential((0..=4).collect(), wheel_metric))
    });
    #[cfg(feature = "parallel")]
    group.bench_function(BenchmarkId::new("parallel", 5), |b| {
        b.iter(|| sweep::map_parallel((0..=4).collect(), wheel_metric))
    });
    group.finish();
}

fn bench_tau_scan(c: &mut Criterion) {
    let taus: Vec<f64> = (1..=256).map(|i| i as f64 * 0.005).collect();
    let mut group = c.benchmark_group("tau_scan");
    group.bench_function(BenchmarkId::new("sequential", taus.len()), |b| {
        b.iter(|| sweep::map_sequential(taus.clone(), tau_scan))
    });
    #[cfg(feature = "parallel")]
    group.bench_function(BenchmarkId::new("parallel", taus.len()), |b| {
        b.iter(|| sweep::map_parallel(taus.clone(), tau_scan))
    });
    group.finish();
}

criterion_group!(benches, bench_wheel, bench_tau_scan);
criterion_main!(benches);
