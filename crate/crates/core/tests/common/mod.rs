//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skewless_core::analysis::{oracle_verdict, tau_max_for};
use skewless_core::topology::{is_connected, mu_max_exact};
use skewless_core::{Edge, ProtocolParams, TopologySpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Every client polls some lower-numbered nodes; node 0 leads.
    LeaderDag,
    /// Undirected graph with symmetric weights.
    Symmetric,
    /// Node 0 leads; clients poll the leader or each other, with cycles.
    LeaderLoops,
    /// Arbitrary strongly connected digraph.
    Directed,
}

pub fn skews(rng: &mut ChaCha8Rng, n: usize, leader_unit: bool) -> Vec<f64> {
    (0..n)
        .map(|i| if leader_unit && i == 0 { 1.0 } else { 1.0 + rng.random_range(-1e-4..1e-4) })
        .collect()
}

fn weight(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.05..0.6)
}

pub fn topology(rng: &mut ChaCha8Rng, shape: Shape, n: usize) -> TopologySpec {
    loop {
        let mut edges: Vec<Edge> = Vec::new();
        let add = |edges: &mut Vec<Edge>, e: Edge| {
            if e.from != e.to && !edges.iter().any(|f| f.from == e.from && f.to == e.to) {
                edges.push(e);
            }
        };
        match shape {
            Shape::LeaderDag => {
                for i in 1..n {
                    let j = rng.random_range(0..i);
                    add(&mut edges, Edge::new(i, j, weight(rng)));
                    for j in 0..i {
                        if rng.random_bool(0.3) {
                            add(&mut edges, Edge::new(i, j, weight(rng)));
                        }
                    }
                }
            }
            Shape::Symmetric => {
                for i in 1..n {
                    let j = rng.random_range(0..i);
                    let a = weight(rng);
                    add(&mut edges, Edge::new(i, j, a));
                    add(&mut edges, Edge::new(j, i, a));
                }
                for i in 0..n {
                    for j in 0..i {
                        if rng.random_bool(0.25) {
                            let a = weight(rng);
                            add(&mut edges, Edge::new(i, j, a));
                            add(&mut edges, Edge::new(j, i, a));
                        }
                    }
                }
            }
            Shape::LeaderLoops => {
                for i in 1..n {
                    let j = rng.random_range(0..i);
                    add(&mut edges, Edge::new(i, j, weight(rng)));
                    for j in 1..n {
                        if rng.random_bool(0.3) {
                            add(&mut edges, Edge::new(i, j, weight(rng)));
                        }
                    }
                }
            }
            Shape::Directed => {
                for i in 0..n {
                    add(&mut edges, Edge::new(i, (i + 1) % n, weight(rng)));
                    for j in 0..n {
                        if rng.random_bool(0.2) {
                            add(&mut edges, Edge::new(i, j, weight(rng)));
                        }
                    }
                }
            }
        }
        let leader_unit = shape != Shape::Symmetric && shape != Shape::Directed;
        let r = skews(rng, n, leader_unit);
        let t = TopologySpec::new(n, edges).unwrap().with_skews(r).unwrap();
        if is_connected(&t) {
            return t;
        }
    }
}

/// Parameters inside conditions (i)-(ii) with `tau` a random fraction of the
/// real-spectrum bound.
pub fn params(rng: &mut ChaCha8Rng, topo: &TopologySpec, frac: std::ops::Range<f64>) -> ProtocolParams {
    let p = rng.random_range(0.3..1.7);
    let kappa1 = rng.random_range(0.3..1.5);
    let dk = rng.random_range(0.1..0.9) * 2.0 * kappa1 / (3.0 * p);
    let base = ProtocolParams::new(kappa1, kappa1 - dk, p, 1.0).unwrap();
    let mu = mu_max_exact(topo);
    let tau = rng.random_range(frac) * tau_max_for(&base, mu);
    base.with_tau(tau)
}

/// Topology and parameters whose deviation dynamics contract with radius at
/// most `rho_cap`.
pub fn stable_instance(
    rng: &mut ChaCha8Rng,
    shape: Shape,
    rho_cap: f64,
) -> (TopologySpec, ProtocolParams) {
    loop {
        let n = rng.random_range(2..=6);
        let t = topology(rng, shape, n);
        let p = params(rng, &t, 0.2..0.9);
        let v = oracle_verdict(&t, &p);
        if v.stable && v.rho_j2 <= rho_cap {
            return (t, p);
        }
    }
}

pub const SHAPES: [Shape; 4] = [Shape::LeaderDag, Shape::Symmetric, Shape::LeaderLoops, Shape::Directed];
pub const LEADER_SHAPES: [Shape; 2] = [Shape::LeaderDag, Shape::LeaderLoops];
