//! Desk-scale versions of the reference experiments.

use std::collections::BTreeMap;

use super::{Event, Scenario};
use crate::dynamics::{ProtocolParams, SystemState};
use crate::noise::{JitterModel, NoiseSpec};
use crate::topology::{leader_loop, Edge, TopologySpec};
use crate::{Error, Result};

/// Weight scale used by every experiment.
pub const C: f64 = 0.7;

/// Leader (node 0) polled by every client; clients sit on a ring and also poll
/// their `k` nearest neighbours on each side. Each client splits `c` evenly
/// over its `2k + 1` neighbours.
pub fn wheel_topology(n: usize, k: usize, c: f64) -> Result<TopologySpec> {
    if n < 3 {
        return Err(Error::InvalidTopology(format!("wheel needs n >= 3, got {n}")));
    }
    if 2 * k > n - 2 {
        return Err(Error::InvalidTopology(format!(
            "K = {k} exceeds (n - 2) / 2 for n = {n}"
        )));
    }
    let clients = n - 1;
    let alpha = c / (2 * k + 1) as f64;
    let mut edges = Vec::with_capacity(clients * (2 * k + 1));
    for j in 0..clients {
        let i = j + 1;
        edges.push(Edge::new(i, 0, alpha));
        for d in 1..=k {
            edges.push(Edge::new(i, 1 + (j + d) % clients, alpha));
            edges.push(Edge::new(i, 1 + (j + clients - d) % clients, alpha));
        }
    }
    TopologySpec::new(n, edges)
}

fn exp_skews(n: usize) -> Vec<f64> {
    // a fixed spread of +-50 ppm
    (0..n)
        .map(|i| if i == 0 { 1.0 } else { 1.0 + 50e-6 * ((i * 7 % 11) as f64 / 5.0 - 1.0) })
        .collect()
}

/// Client-server at poll interval `tau`; at step 60 a third node appears and
/// the clients start polling each other as well.
pub fn exp1(tau: f64, steps: usize) -> Result<Scenario> {
    let skews = exp_skews(3);
    let before =
        TopologySpec::new(3, vec![Edge::new(1, 0, C)])?.with_skews(skews.clone())?;
    let after = leader_loop(C).with_skews(skews)?;
    let params = ProtocolParams::new(1.1, 1.0, 0.99, tau)?;
    let z0 = SystemState::new(vec![0.0, 5e-3, -2e-3], vec![1.0; 3], vec![0.0; 3])?;
    let mut sc = Scenario::new(before, params, steps).with_initial(z0);
    sc.initially_disabled = vec![2];
    if steps > 60 {
        sc = sc
            .with_event(60, Event::ReplaceTopology(after))
            .with_event(60, Event::EnableNode(2));
    }
    Ok(sc)
}

/// Wheel of ten nodes with `k` ring neighbours per side. Links to the leader
/// carry two-way jitter with delays uniform on `{0, 1, ..., 10}` ms.
pub fn exp2(k: usize, steps: usize, seed: u64) -> Result<Scenario> {
    let n = 10;
    let topo = wheel_topology(n, k, C)?.with_skews(exp_skews(n))?;
    let jitter = JitterModel::UniformGrid { max: 10e-3, grid: 1e-3 };
    let edge_jitter: BTreeMap<_, _> = (1..n).map(|i| ((i, 0), jitter)).collect();
    let noise = NoiseSpec { edge_jitter, seed, ..Default::default() };
    let z0 = SystemState::ideal(&topo, 0.0);
    Ok(Scenario::new(topo, ProtocolParams::defaults(0.5), steps)
        .with_noise(noise)
        .with_initial(z0))
}

/// Step at which [`exp5`] switches the leader off.
pub fn exp5_fault_step(steps: usize) -> usize {
    steps / 5
}

/// Loop topology at 0.5 s with a 1 us bias on the `1 -> 2` link. The leader
/// is switched off after a fifth of the run, which coincides with the end of
/// the default warm-up.
pub fn exp5(steps: usize) -> Result<Scenario> {
    let topo = leader_loop(C).with_skews(exp_skews(3))?;
    let z0 = SystemState::ideal(&topo, 0.0);
    let mut sc = Scenario::new(topo, ProtocolParams::defaults(0.5), steps)
        .with_initial(z0)
        .with_event(0, Event::InjectBias { from: 1, to: 2, seconds: 1e-6 });
    let k0 = exp5_fault_step(steps);
    if k0 < steps {
        sc = sc.with_event(k0, Event::DisableNode(0));
    }
    sc.warmup = k0 as f64 / (steps + 1) as f64;
    Ok(sc)
}

/// Noise scenario for the gain presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainPreset {
    /// Large jitter on the two links into the leader.
    Jitter,
    /// Large wander on every clock.
    Wander,
    Both,
}

impl GainPreset {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "jitter" => Some(GainPreset::Jitter),
            "wander" => Some(GainPreset::Wander),
            "both" => Some(GainPreset::Both),
            _ => None,
        }
    }
}

/// Seven nodes in three layers: nodes 1 and 2 poll the leader and each
/// other, nodes 3 and 4 poll both of them, nodes 5 and 6 poll nodes 3 and 4.
pub fn exp6_topology(c: f64) -> Result<TopologySpec> {
    let deps: [&[usize]; 7] = [&[], &[0, 2], &[0, 1], &[1, 2], &[1, 2], &[3, 4], &[3, 4]];
    let mut edges = Vec::new();
    for (i, nbrs) in deps.iter().enumerate() {
        for &j in *nbrs {
            edges.push(Edge::new(i, j, c / nbrs.len() as f64));
        }
    }
    TopologySpec::new(7, edges)
}

/// [`exp6_topology`] with the noise gains of `preset`.
pub fn exp6_gains(preset: GainPreset) -> Result<TopologySpec> {
    let topo = exp6_topology(C)?;
    let (gd, leader_gw) = match preset {
        GainPreset::Jitter => (1e-3, 100.0),
        GainPreset::Wander => (1e-1, 1.0),
        GainPreset::Both => (1e-1, 100.0),
    };
    let gw: Vec<f64> = topo
        .edges()
        .iter()
        .map(|e| if e.to == 0 { leader_gw } else { 1.0 })
        .collect();
    let n = topo.n();
    topo.with_edge_gains(&gw)?.with_wander_gains(vec![gd; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::find_leader;

    #[test]
    fn wheel_shapes() {
        let star = wheel_topology(10, 0, 0.7).unwrap();
        assert_eq!(star.m(), 9);
        assert!(star.edges().iter().all(|e| e.to == 0 && e.alpha == 0.7));
        let full = wheel_topology(10, 4, 0.7).unwrap();
        for i in 1..10 {
            let out: Vec<usize> =
                full.edges().iter().filter(|e| e.from == i).map(|e| e.to).collect();
            assert_eq!(out.len(), 9);
            for j in 0..10 {
                assert_eq!(out.contains(&j), j != i, "client {i} target {j}");
            }
        }
        assert!(wheel_topology(10, 5, 0.7).is_err());
        assert!(wheel_topology(2, 0, 0.7).is_err());
        assert_eq!(find_leader(&full), Some(0));
    }

    #[test]
    fn degree_is_2k_plus_1() {
        let t = wheel_topology(9, 2, 0.7).unwrap();
        for i in 1..9 {
            assert_eq!(t.edges().iter().filter(|e| e.from == i).count(), 5);
        }
    }

    #[test]
    fn presets_validate() {
        exp1(1.0, 200).unwrap().validate().unwrap();
        exp2(3, 100, 1).unwrap().validate().unwrap();
        let e5 = exp5(1000).unwrap();
        e5.validate().unwrap();
        assert_eq!(e5.warmup_steps(), exp5_fault_step(1000));
        let t = exp6_gains(GainPreset::Both).unwrap();
        assert_eq!(find_leader(&t), Some(0));
        assert_eq!(t.edges().iter().filter(|e| e.gw == 100.0).count(), 2);
    }
}
