use skewless_core::dynamics::SystemState;
use skewless_core::noise::{h2_value, optimize_params, NoiseSpec, OptimizeOptions, WanderModel};
use skewless_core::sim::presets::{self, exp5_fault_step};
use skewless_core::sim::{self, quadratic_drift_fit, relative_frequency_error, Scenario};
use skewless_core::topology::client_server;
use skewless_core::ProtocolParams;

#[test]
fn exp1_loses_stability_after_topology_change() {
    let tr = sim::run(&presets::exp1(1.0, 60 + 10_000).unwrap()).unwrap();
    let early = (0..60).map(|k| tr.offset_us(k, 1).abs()).fold(0.0, f64::max);
    assert!(early < 1e4);
    let blown = (60..tr.len()).any(|k| tr.offset_us(k, 1).abs() > 1e6);
    assert!(blown);
}

#[test]
fn exp5_offsets_grow_parabolically() {
    let steps = 8000;
    let tr = sim::run(&presets::exp5(steps).unwrap()).unwrap();
    let k0 = exp5_fault_step(steps);
    for node in [1, 2] {
        let a = quadratic_drift_fit(&tr, node, k0..tr.len()).unwrap();
        assert!(a > 0.0, "node {node}: {a}");
    }
    assert!(tr.drift_fit.unwrap() > 0.0);
}

#[test]
fn stable_run_frequency_error_vanishes() {
    let topo = client_server(0.7).with_skews(vec![1.0, 1.0 - 25e-6]).unwrap();
    let z0 = SystemState::new(vec![0.0, 1e-3], vec![1.0; 2], vec![0.0; 2]).unwrap();
    let tr = sim::run(&Scenario::new(topo, ProtocolParams::defaults(0.5), 3000).with_initial(z0))
        .unwrap();
    let f = relative_frequency_error(&tr, 1, 10).unwrap();
    assert!(f[0].abs() > 1e-6);
    assert!(f.last().unwrap().abs() < 1e-12);
}

#[test]
fn client_wander_monte_carlo_matches_h2() {
    let topo = client_server(0.7).with_wander_gains(vec![0.0, 1e-6]).unwrap().with_edge_gains(&[0.0]).unwrap();
    let params = ProtocolParams::defaults(0.5);
    let f = h2_value(&topo, &params).unwrap();
    let noise = NoiseSpec { wander: WanderModel::Gaussian { sigma: 1.0 }, seed: 21, ..Default::default() };
    let sc = Scenario::new(topo, params, 250_000).with_noise(noise);
    let var = sim::offset_variance(&sc, 5).unwrap();
    let rms = var.iter().sum::<f64>().sqrt();
    assert!((rms - f).abs() / f < 0.02, "{rms} vs {f}");
}

#[test]
fn optimizer_is_a_no_op_at_its_own_optimum() {
    let topo = presets::exp6_gains(presets::GainPreset::Jitter).unwrap();
    let opts = OptimizeOptions { max_iter: 500, ..Default::default() };
    let first = optimize_params(&topo, &ProtocolParams::defaults(0.5), &opts).unwrap();
    let again = optimize_params(&topo, &first.params, &opts).unwrap();
    assert!((again.f - first.f).abs() <= 1e-9 * first.f.max(1.0) + 1e-6 * first.f);
    assert!(again.f <= first.f);
}

#[test]
fn metrics_ordering_on_noisy_wheel() {
    let tr = sim::run(&presets::exp2(2, 4000, 5).unwrap()).unwrap();
    let m = tr.metrics.unwrap();
    assert!(m.ci100_us >= m.ci99_us && m.ci99_us >= 0.0 && m.sqrt_sn_us > 0.0);
}
