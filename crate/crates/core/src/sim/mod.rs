//! Seeded scenario engine: runs the update rule under a noise model and a
//! script of events, records offsets to the reference node, and computes the
//! summary metrics.

mod metrics;
pub mod presets;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{decompose, ProtocolParams, SystemState};
use crate::noise::NoiseSpec;
use crate::topology::{build_graph_quantities, find_leader, GraphQuantities, TopologySpec};
use crate::{sweep, Error, Result};

pub use presets::wheel_topology;
pub use metrics::{
    metrics, offset_metrics, quadratic_drift_fit, relative_frequency_error, Metrics,
};

/// Default jump threshold for the spurious-offset filter, in seconds.
pub const SPURIOUS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    /// Swap the measurement graph. The node count must not change.
    ReplaceTopology(TopologySpec),
    /// Node stops polling and answering; its clock keeps running with the
    /// last `s`.
    DisableNode(usize),
    EnableNode(usize),
    /// Step the node's clock by `seconds`.
    InjectOffset { node: usize, seconds: f64 },
    /// Persistent bias added to every later measurement on `from -> to`.
    InjectBias { from: usize, to: usize, seconds: f64 },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub topo: TopologySpec,
    pub params: ProtocolParams,
    pub noise: NoiseSpec,
    pub steps: usize,
    /// `(step, event)` pairs, applied before the update of that step.
    pub events: Vec<(usize, Event)>,
    /// Fraction of the run excluded from metrics.
    pub warmup: f64,
    /// Starting state; `None` starts every clock at zero with `s_i = 1/r_i`.
    pub initial: Option<SystemState>,
    /// Nodes that start disabled.
    pub initially_disabled: Vec<usize>,
    /// Drop measurements that jump by more than this between polls.
    pub spurious_filter: Option<f64>,
}

impl Scenario {
    pub fn new(topo: TopologySpec, params: ProtocolParams, steps: usize) -> Self {
        Scenario {
            topo,
            params,
            noise: NoiseSpec::noiseless(),
            steps,
            events: Vec::new(),
            warmup: 0.2,
            initial: None,
            initially_disabled: Vec::new(),
            spurious_filter: None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_event(mut self, step: usize, event: Event) -> Self {
        self.events.push((step, event));
        self
    }

    pub fn with_initial(mut self, z: SystemState) -> Self {
        self.initial = Some(z);
        self
    }

    pub fn with_warmup(mut self, warmup: f64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.topo.n();
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if !(0.0..1.0).contains(&self.warmup) {
            return bad(format!("warmup {} outside [0, 1)", self.warmup));
        }
        self.noise.validate()?;
        if let Some(z) = &self.initial {
            if z.n() != n || z.s.len() != n || z.y.len() != n {
                return bad(format!("initial state has {} nodes, topology has {n}", z.n()));
            }
        }
        if let Some(t) = self.spurious_filter {
            if t.is_nan() || t <= 0.0 {
                return bad("spurious filter threshold must be positive".into());
            }
        }
        if let Some(&i) = self.initially_disabled.iter().find(|&&i| i >= n) {
            return bad(format!("disabled node {i} out of range"));
        }
        for (step, ev) in &self.events {
            if *step >= self.steps {
                return bad(format!("event at step {step} beyond {} steps", self.steps));
            }
            let node_ok = |i: usize| i < n;
            let ok = match ev {
                Event::ReplaceTopology(t) => t.n() == n,
                Event::DisableNode(i) | Event::EnableNode(i) => node_ok(*i),
                Event::InjectOffset { node, seconds } => node_ok(*node) && seconds.is_finite(),
                Event::InjectBias { from, to, seconds } => {
                    node_ok(*from) && node_ok(*to) && seconds.is_finite()
                }
            };
            if !ok {
                return bad(format!("invalid event at step {step}: {ev:?}"));
            }
        }
        Ok(())
    }

    /// First step whose samples enter the metrics.
    pub fn warmup_steps(&self) -> usize {
        (self.warmup * (self.steps + 1) as f64 + 1e-9).floor() as usize
    }
}

/// Reference node for offsets: the leader among initially active nodes, else
/// node 0.
fn reference_node(topo: &TopologySpec, active: &[bool]) -> usize {
    let keep: Vec<usize> = (0..topo.n()).filter(|&i| active[i]).collect();
    topo.induced(&keep)
        .ok()
        .and_then(|t| find_leader(&t))
        .map(|l| keep[l])
        .unwrap_or(0)
}

struct ActiveGraph {
    nodes: Vec<usize>,
    topo: TopologySpec,
    gq: Option<GraphQuantities>,
}

/// Stepwise simulator. [`run`] drives one of these; Monte Carlo code uses it
/// directly to avoid storing the trace.
pub struct Simulator {
    topo: TopologySpec,
    params: ProtocolParams,
    noise: NoiseSpec,
    state: SystemState,
    active: Vec<bool>,
    bias: BTreeMap<(usize, usize), f64>,
    last_meas: BTreeMap<(usize, usize), f64>,
    filter: Option<f64>,
    reference: usize,
    rng: ChaCha8Rng,
    graph: Option<ActiveGraph>,
}

impl Simulator {
    pub fn new(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let n = sc.topo.n();
        let state = sc.initial.clone().unwrap_or_else(|| SystemState::ideal(&sc.topo, 0.0));
        let mut active = vec![true; n];
        for &i in &sc.initially_disabled {
            active[i] = false;
        }
        let reference = reference_node(&sc.topo, &active);
        Ok(Simulator {
            topo: sc.topo.clone(),
            params: sc.params,
            noise: sc.noise.clone(),
            state,
            active,
            bias: BTreeMap::new(),
            last_meas: BTreeMap::new(),
            filter: sc.spurious_filter,
            reference,
            rng: ChaCha8Rng::seed_from_u64(sc.noise.seed),
            graph: None,
        })
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn topology(&self) -> &TopologySpec {
        &self.topo
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.active[node]
    }

    pub fn apply(&mut self, ev: &Event) -> Result<()> {
        let n = self.topo.n();
        match ev {
            Event::ReplaceTopology(t) => {
                if t.n() != n {
                    return Err(Error::InvalidScenario(format!(
                        "replacement topology has {} nodes, expected {n}",
                        t.n()
                    )));
                }
                self.topo = t.clone();
                self.graph = None;
            }
            Event::DisableNode(i) => {
                self.active[*i] = false;
                self.graph = None;
            }
            Event::EnableNode(i) => {
                self.active[*i] = true;
                self.graph = None;
            }
            Event::InjectOffset { node, seconds } => self.state.x[*node] += seconds,
            Event::InjectBias { from, to, seconds } => {
                *self.bias.entry((*from, *to)).or_insert(0.0) += seconds;
            }
        }
        Ok(())
    }

    /// One poll interval: measure, then update every active node.
    pub fn step(&mut self) {
        let n = self.topo.n();
        let z = &self.state;
        let mut acc = vec![0.0; n];
        for e in self.topo.edges() {
            if !(self.active[e.from] && self.active[e.to]) {
                continue;
            }
            let key = (e.from, e.to);
            let err = self.noise.jitter_for(e.from, e.to).sample(&mut self.rng);
            let d = z.x[e.to] - z.x[e.from]
                + e.gw * err
                + self.bias.get(&key).copied().unwrap_or(0.0);
            if let Some(limit) = self.filter {
                let prev = self.last_meas.insert(key, d);
                if prev.is_some_and(|p| (d - p).abs() > limit) {
                    continue;
                }
            }
            acc[e.from] += e.alpha * d;
        }
        let r = self.topo.skews();
        let gd = self.topo.wander_gains();
        let ProtocolParams { kappa1, kappa2, p, tau } = self.params;
        let mut next = z.clone();
        for i in 0..n {
            next.x[i] = z.x[i] + tau * r[i] * z.s[i];
            if self.active[i] {
                let wander = self.noise.wander.sample(&mut self.rng);
                next.s[i] = z.s[i] + kappa1 * acc[i] - kappa2 * z.y[i] + gd[i] * wander;
                next.y[i] = p * acc[i] + (1.0 - p) * z.y[i];
            }
        }
        next.k += 1;
        self.state = next;
    }

    /// Offsets `x_i - x_ref` in seconds (zero at the reference).
    pub fn offsets(&self) -> Vec<f64> {
        let xr = self.state.x[self.reference];
        self.state.x.iter().map(|x| x - xr).collect()
    }

    /// Collective `(x~, s~, y~)` of the active subgraph; NaN when it is not
    /// connected.
    pub fn collective(&mut self) -> [f64; 3] {
        if self.graph.is_none() {
            let nodes: Vec<usize> = (0..self.topo.n()).filter(|&i| self.active[i]).collect();
            let topo = self.topo.induced(&nodes).expect("induced topology of a valid one");
            let gq = if nodes.is_empty() { None } else { build_graph_quantities(&topo).ok() };
            self.graph = Some(ActiveGraph { nodes, topo, gq });
        }
        let g = self.graph.as_ref().expect("just built");
        let Some(gq) = &g.gq else {
            return [f64::NAN; 3];
        };
        let pick = |v: &[f64]| g.nodes.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let sub = SystemState {
            x: pick(&self.state.x),
            s: pick(&self.state.s),
            y: pick(&self.state.y),
            k: self.state.k,
        };
        let (t, _) = decompose(&sub, &g.topo, gq);
        [t[0], t[1], t[2]]
    }
}

/// Recorded run. Per-node series are stored step-major: entry
/// `k * n + i` belongs to node `i` at step `k`.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub n: usize,
    pub tau: f64,
    pub reference: usize,
    /// Index of the first post-warmup step.
    pub warmup_start: usize,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub offsets_us: Vec<f64>,
    pub collective: Vec<[f64; 3]>,
    pub metrics: Option<Metrics>,
    pub drift_fit: Option<f64>,
}

impl SimTrace {
    /// Number of recorded steps (the initial state plus one per update).
    pub fn len(&self) -> usize {
        self.collective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.collective.is_empty()
    }

    pub fn offset_us(&self, k: usize, node: usize) -> f64 {
        self.offsets_us[k * self.n + node]
    }

    /// Offsets of `node` in microseconds over the whole run.
    pub fn node_offsets_us(&self, node: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.offset_us(k, node)).collect()
    }

    pub fn node_x(&self, node: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.x[k * self.n + node]).collect()
    }

    pub fn node_s(&self, node: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.s[k * self.n + node]).collect()
    }
}

/// Runs the scenario, recording every step.
pub fn run(sc: &Scenario) -> Result<SimTrace> {
    let mut sim = Simulator::new(sc)?;
    let n = sc.topo.n();
    let mut events: Vec<&(usize, Event)> = sc.events.iter().collect();
    events.sort_by_key(|(k, _)| *k);
    let mut pending = events.into_iter().peekable();

    let cap = (sc.steps + 1) * n;
    let mut trace = SimTrace {
        n,
        tau: sc.params.tau,
        reference: sim.reference(),
        warmup_start: sc.warmup_steps(),
        x: Vec::with_capacity(cap),
        s: Vec::with_capacity(cap),
        offsets_us: Vec::with_capacity(cap),
        collective: Vec::with_capacity(sc.steps + 1),
        metrics: None,
        drift_fit: None,
    };
    let record = |sim: &mut Simulator, trace: &mut SimTrace| {
        trace.x.extend_from_slice(&sim.state().x);
        trace.s.extend_from_slice(&sim.state().s);
        trace.offsets_us.extend(sim.offsets().iter().map(|v| v * 1e6));
        trace.collective.push(sim.collective());
    };
    for k in 0..sc.steps {
        while let Some((_, ev)) = pending.next_if(|(s, _)| *s == k) {
            sim.apply(ev)?;
        }
        record(&mut sim, &mut trace);
        sim.step();
    }
    record(&mut sim, &mut trace);

    trace.metrics = metrics(&trace, trace.warmup_start).ok();
    trace.drift_fit = mean_drift_fit(&trace);
    Ok(trace)
}

/// Average quadratic coefficient over non-reference nodes, post-warmup.
fn mean_drift_fit(trace: &SimTrace) -> Option<f64> {
    let nodes: Vec<usize> = (0..trace.n).filter(|&i| i != trace.reference).collect();
    if nodes.is_empty() {
        return None;
    }
    let window = trace.warmup_start..trace.len();
    let mut sum = 0.0;
    for &i in &nodes {
        sum += quadratic_drift_fit(trace, i, window.clone()).ok()?;
    }
    Some(sum / nodes.len() as f64)
}

/// Per-node variance of the offsets to the reference (seconds squared),
/// averaged over `replicas` independent runs without storing traces.
/// Replica `j` uses seed `noise.seed + j`; the result does not depend on how
/// the replicas are scheduled.
pub fn offset_variance(sc: &Scenario, replicas: usize) -> Result<Vec<f64>> {
    if replicas == 0 {
        return Err(Error::TooFewSamples { needed: 1, have: 0 });
    }
    let start = sc.warmup_steps();
    if sc.steps < start + 2 {
        return Err(Error::TooFewSamples { needed: 2, have: sc.steps.saturating_sub(start) });
    }
    let seeds: Vec<u64> =
        (0..replicas as u64).map(|j| sweep::replica_seed(sc.noise.seed, j)).collect();
    let per_replica = sweep::map(seeds, |seed| -> Result<Vec<f64>> {
        let mut sc = sc.clone();
        sc.noise.seed = seed;
        let mut sim = Simulator::new(&sc)?;
        let n = sc.topo.n();
        let mut mean = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        let mut count = 0.0;
        let mut events: Vec<&(usize, Event)> = sc.events.iter().collect();
        events.sort_by_key(|(k, _)| *k);
        let mut pending = events.into_iter().peekable();
        for k in 0..sc.steps {
            while let Some((_, ev)) = pending.next_if(|(s, _)| *s == k) {
                sim.apply(ev)?;
            }
            sim.step();
            if k + 1 >= start {
                count += 1.0;
                for (i, v) in sim.offsets().into_iter().enumerate() {
                    let d = v - mean[i];
                    mean[i] += d / count;
                    m2[i] += d * (v - mean[i]);
                }
            }
        }
        Ok(m2.into_iter().map(|m| m / count).collect())
    });
    let mut acc = vec![0.0; sc.topo.n()];
    for r in per_replica {
        for (a, v) in acc.iter_mut().zip(r?) {
            *a += v / replicas as f64;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{JitterModel, WanderModel};
    use crate::topology::{client_server, leader_loop};

    fn cs_scenario(steps: usize) -> Scenario {
        let topo = client_server(0.7).with_skews(vec![1.0, 1.0 + 40e-6]).unwrap();
        let z0 = SystemState::new(vec![0.0, 3e-3], vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        Scenario::new(topo, ProtocolParams::defaults(1.0), steps).with_initial(z0)
    }

    #[test]
    fn noiseless_client_server_converges() {
        let tr = run(&cs_scenario(3000)).unwrap();
        let m = tr.metrics.clone().unwrap();
        assert!(m.ci100_us < 1e-3, "{m:?}");
        let tail = tr.offset_us(tr.len() - 1, 1).abs();
        assert!(tail < 1e-3);
    }

    #[test]
    fn same_seed_same_trace() {
        let noise = NoiseSpec {
            jitter: JitterModel::UniformGrid { max: 1e-3, grid: 1e-4 },
            wander: WanderModel::Gaussian { sigma: 1e-7 },
            seed: 9,
            ..Default::default()
        };
        let sc = cs_scenario(300).with_noise(noise);
        let a = run(&sc).unwrap();
        let b = run(&sc).unwrap();
        assert_eq!(a.offsets_us, b.offsets_us);
        assert_eq!(a.s, b.s);
    }

    #[test]
    fn matches_algorithm1_without_noise() {
        let topo = leader_loop(0.7).with_skews(vec![1.0, 1.00002, 0.99997]).unwrap();
        let params = ProtocolParams::defaults(0.5);
        let z0 =
            SystemState::new(vec![0.0, 1e-3, -2e-3], vec![1.0, 1.0, 1.0], vec![0.0; 3]).unwrap();
        let sc = Scenario::new(topo.clone(), params, 50).with_initial(z0.clone());
        let tr = run(&sc).unwrap();
        let mut z = z0;
        for _ in 0..50 {
            let d = crate::dynamics::noiseless_offsets(&z, &topo);
            z = crate::dynamics::step_algorithm1(&z, &topo, &params, &d).unwrap();
        }
        for i in 0..3 {
            assert_eq!(tr.node_x(i)[50], z.x[i]);
        }
    }

    #[test]
    fn disabled_node_free_runs() {
        let sc = cs_scenario(20).with_event(5, Event::DisableNode(1));
        let tr = run(&sc).unwrap();
        let s = tr.node_s(1);
        assert!(s[6..].iter().all(|v| *v == s[5]));
        let x = tr.node_x(1);
        let r = 1.0 + 40e-6;
        assert!((x[10] - x[9] - r * s[5]).abs() < 1e-15);
    }

    #[test]
    fn offset_injection_moves_clock() {
        let sc = cs_scenario(10).with_event(3, Event::InjectOffset { node: 0, seconds: 0.025 });
        let tr = run(&sc).unwrap();
        let x = tr.node_x(0);
        assert!((x[3] - x[2] - 1.0 - 0.025).abs() < 1e-12);
    }

    #[test]
    fn spurious_filter_drops_jumps() {
        let mut sc = cs_scenario(10).with_event(4, Event::InjectOffset { node: 0, seconds: 2.0 });
        sc.initial = Some(SystemState::ideal(&sc.topo, 0.0));
        sc.spurious_filter = Some(SPURIOUS_THRESHOLD);
        let tr = run(&sc).unwrap();
        // only the poll that sees the jump is dropped
        let s = tr.node_s(1);
        assert!((s[5] - s[4]).abs() < 1e-9);
        assert!((s[6] - s[5]).abs() > 1.0);
    }

    #[test]
    fn event_validation() {
        let sc = cs_scenario(10).with_event(10, Event::DisableNode(0));
        assert!(run(&sc).is_err());
        let sc = cs_scenario(10).with_event(1, Event::ReplaceTopology(leader_loop(0.7)));
        assert!(run(&sc).is_err());
        assert!(run(&cs_scenario(10).with_warmup(1.0)).is_err());
    }

    #[test]
    fn collective_nan_when_disconnected() {
        let sc = cs_scenario(4).with_event(1, Event::ReplaceTopology(
            TopologySpec::new(2, vec![]).unwrap().with_skews(vec![1.0, 1.0 + 40e-6]).unwrap(),
        ));
        let tr = run(&sc).unwrap();
        assert!(tr.collective[0][0].is_finite());
        assert!(tr.collective[2][0].is_nan());
    }

    #[test]
    fn variance_is_schedule_independent() {
        let noise = NoiseSpec {
            jitter: JitterModel::Gaussian { sigma: 1e-4 },
            seed: 3,
            ..Default::default()
        };
        let sc = cs_scenario(400).with_noise(noise);
        let a = offset_variance(&sc, 4).unwrap();
        let b = offset_variance(&sc, 4).unwrap();
        assert_eq!(a, b);
        assert!(a[1] > 0.0 && a[0] == 0.0);
    }
}
