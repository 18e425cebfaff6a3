//! Directed measurement graphs and the quantities derived from them.
//!
//! An edge `i -> j` means node `i` measures its offset to node `j`. Nodes are
//! indexed from 0.

use std::collections::{BTreeSet, VecDeque};

use crate::linalg::{self, Mat, Vector};
use crate::{Error, Result};

/// One measurement edge `from -> to` with weight `alpha` and jitter gain `gw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub alpha: f64,
    pub gw: f64,
}

impl Edge {
    pub fn new(from: usize, to: usize, alpha: f64) -> Self {
        Edge { from, to, alpha, gw: 1.0 }
    }

    pub fn with_gain(mut self, gw: f64) -> Self {
        self.gw = gw;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    n: usize,
    edges: Vec<Edge>,
    skews: Vec<f64>,
    wander_gains: Vec<f64>,
}

impl TopologySpec {
    /// Validated topology with unit skews and unit wander gains.
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::with_all(n, edges, vec![1.0; n], vec![1.0; n])
    }

    pub fn with_all(
        n: usize,
        edges: Vec<Edge>,
        skews: Vec<f64>,
        wander_gains: Vec<f64>,
    ) -> Result<Self> {
        let t = TopologySpec { n, edges, skews, wander_gains };
        t.validate()?;
        Ok(t)
    }

    pub fn with_skews(mut self, skews: Vec<f64>) -> Result<Self> {
        self.skews = skews;
        self.validate()?;
        Ok(self)
    }

    pub fn with_wander_gains(mut self, gd: Vec<f64>) -> Result<Self> {
        self.wander_gains = gd;
        self.validate()?;
        Ok(self)
    }

    /// Replaces every edge weight, keeping order. Used by sensitivity code.
    pub fn with_alphas(&self, alphas: &[f64]) -> Result<Self> {
        if alphas.len() != self.edges.len() {
            return Err(Error::Dimension("one weight per edge expected".into()));
        }
        let mut t = self.clone();
        for (e, &a) in t.edges.iter_mut().zip(alphas) {
            e.alpha = a;
        }
        t.validate()?;
        Ok(t)
    }

    pub fn with_edge_gains(&self, gw: &[f64]) -> Result<Self> {
        if gw.len() != self.edges.len() {
            return Err(Error::Dimension("one gain per edge expected".into()));
        }
        let mut t = self.clone();
        for (e, &g) in t.edges.iter_mut().zip(gw) {
            e.gw = g;
        }
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTopology(m));
        if self.n == 0 {
            return bad("at least one node required".into());
        }
        if self.skews.len() != self.n {
            return bad(format!("expected {} skews, got {}", self.n, self.skews.len()));
        }
        if self.wander_gains.len() != self.n {
            return bad(format!(
                "expected {} wander gains, got {}",
                self.n,
                self.wander_gains.len()
            ));
        }
        if let Some((i, r)) = self
            .skews
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r > 0.0))
        {
            return bad(format!("skew of node {i} must be positive, got {r}"));
        }
        if let Some((i, g)) = self
            .wander_gains
            .iter()
            .enumerate()
            .find(|(_, g)| !(g.is_finite() && **g >= 0.0))
        {
            return bad(format!("wander gain of node {i} must be non-negative, got {g}"));
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if e.from >= self.n || e.to >= self.n {
                return bad(format!("edge {}->{} references a missing node", e.from, e.to));
            }
            if e.from == e.to {
                return bad(format!("self-edge on node {}", e.from));
            }
            if !(e.alpha.is_finite() && e.alpha > 0.0) {
                return bad(format!("edge {}->{} weight must be positive", e.from, e.to));
            }
            if !(e.gw.is_finite() && e.gw >= 0.0) {
                return bad(format!("edge {}->{} gain must be non-negative", e.from, e.to));
            }
            if !seen.insert((e.from, e.to)) {
                return bad(format!("duplicate edge {}->{}", e.from, e.to));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn skews(&self) -> &[f64] {
        &self.skews
    }

    pub fn wander_gains(&self) -> &[f64] {
        &self.wander_gains
    }

    pub fn edge_index(&self, from: usize, to: usize) -> Option<usize> {
        self.edges.iter().position(|e| e.from == from && e.to == to)
    }

    /// Weighted in-degree `alpha_ii` of each node.
    pub fn alpha_diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for e in &self.edges {
            d[e.from] += e.alpha;
        }
        d
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_diag().into_iter().fold(0.0, f64::max)
    }

    pub fn skew_matrix(&self) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(&self.skews))
    }

    pub fn laplacian(&self) -> Mat {
        let mut l = Mat::zeros(self.n, self.n);
        for e in &self.edges {
            l[(e.from, e.from)] += e.alpha;
            l[(e.from, e.to)] -= e.alpha;
        }
        l
    }

    /// Incidence matrix: column per edge, `+1` at the measured node and `-1`
    /// at the measuring node.
    pub fn incidence(&self) -> Mat {
        let mut b = Mat::zeros(self.n, self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            b[(e.to, k)] = 1.0;
            b[(e.from, k)] = -1.0;
        }
        b
    }

    pub fn incidence_minus(&self) -> Mat {
        self.incidence().map(|v| v.min(0.0))
    }

    /// Returns the copy restricted to `keep` (sorted, deduplicated). Edges
    /// touching dropped nodes disappear; returned indices are renumbered.
    pub fn induced(&self, keep: &[usize]) -> Result<TopologySpec> {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| map[e.from] != usize::MAX && map[e.to] != usize::MAX)
            .map(|e| Edge { from: map[e.from], to: map[e.to], ..*e })
            .collect();
        TopologySpec::with_all(
            keep.len(),
            edges,
            keep.iter().map(|&i| self.skews[i]).collect(),
            keep.iter().map(|&i| self.wander_gains[i]).collect(),
        )
    }
}

/// Quantities derived from a connected topology.
#[derive(Debug, Clone)]
pub struct GraphQuantities {
    pub laplacian: Mat,
    pub incidence: Mat,
    pub incidence_minus: Mat,
    /// Normalised left null vector of the Laplacian.
    pub xi: Vector,
    /// Weighted harmonic mean of the skews, `1/gamma = sum xi_i / r_i`.
    pub gamma: f64,
    pub leader: Option<usize>,
    pub mu_max: f64,
    pub alpha_max: f64,
}

/// Numerical connectivity: the Laplacian has rank `n - 1`.
pub fn is_connected(topo: &TopologySpec) -> bool {
    let l = topo.laplacian();
    let n = topo.n();
    if n == 1 {
        return true;
    }
    linalg::numerical_rank(&l, 1e-9) == n - 1
}

pub fn build_graph_quantities(topo: &TopologySpec) -> Result<GraphQuantities> {
    let n = topo.n();
    let l = topo.laplacian();
    if !is_connected(topo) {
        return Err(Error::NotConnected);
    }
    let leader = find_leader(topo);
    let xi = match leader {
        // the leader's Laplacian row is zero
        Some(l) => Vector::from_fn(n, |i, _| if i == l { 1.0 } else { 0.0 }),
        None => {
            // (L^T + 11^T/n) v = 1/n has xi as its unique solution when the
            // zero eigenvalue is simple.
            let inv_n = 1.0 / n as f64;
            let sys = l.transpose().add_scalar(inv_n);
            let rhs = Vector::from_element(n, inv_n);
            let v = sys.lu().solve(&rhs).ok_or(Error::NotConnected)?;
            let sum: f64 = v.iter().sum();
            v / sum
        }
    };
    let gamma = 1.0 / xi.iter().zip(topo.skews()).map(|(x, r)| x / r).sum::<f64>();
    Ok(GraphQuantities {
        incidence: topo.incidence(),
        incidence_minus: topo.incidence_minus(),
        xi,
        gamma,
        leader,
        mu_max: mu_max_exact(topo),
        alpha_max: topo.alpha_max(),
        laplacian: l,
    })
}

/// The unique node without outgoing edges that every other node reaches.
pub fn find_leader(topo: &TopologySpec) -> Option<usize> {
    let n = topo.n();
    let mut out_deg = vec![0usize; n];
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in topo.edges() {
        out_deg[e.from] += 1;
        reverse[e.to].push(e.from);
    }
    let mut sinks = (0..n).filter(|&i| out_deg[i] == 0);
    let cand = sinks.next()?;
    if sinks.next().is_some() {
        return None;
    }
    let mut seen = vec![false; n];
    seen[cand] = true;
    let mut queue = VecDeque::from([cand]);
    while let Some(u) = queue.pop_front() {
        for &w in &reverse[u] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen.iter().all(|&s| s).then_some(cand)
}

/// Spectral radius of `L R`.
pub fn mu_max_exact(topo: &TopologySpec) -> f64 {
    if topo.m() == 0 {
        return 0.0;
    }
    linalg::spectral_radius(&(topo.laplacian() * topo.skew_matrix()))
}

/// Circle-theorem bound `2 * alpha_max * r_hat_max`; valid for any
/// `r_hat_max >= max r_i`.
pub fn mu_max_gershgorin(topo: &TopologySpec, r_hat_max: f64) -> f64 {
    2.0 * topo.alpha_max() * r_hat_max
}

/// Edges for the 3-node loop in which nodes 1 and 2 both poll node 0 and each
/// other, every weight `c / 2`.
pub fn leader_loop(c: f64) -> TopologySpec {
    let a = c / 2.0;
    TopologySpec::new(
        3,
        vec![Edge::new(1, 0, a), Edge::new(2, 0, a), Edge::new(1, 2, a), Edge::new(2, 1, a)],
    )
    .expect("static topology is valid")
}

/// Single client (node 1) polling a server (node 0) with weight `c`.
pub fn client_server(c: f64) -> TopologySpec {
    TopologySpec::new(2, vec![Edge::new(1, 0, c)]).expect("static topology is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_client_server() {
        let t = TopologySpec::new(2, vec![Edge::new(1, 0, 0.7)]).unwrap();
        let gq = build_graph_quantities(&t).unwrap();
        let expect = Mat::from_row_slice(2, 2, &[0.0, 0.0, -0.7, 0.7]);
        assert_eq!(gq.laplacian, expect);
        assert!((gq.xi[0] - 1.0).abs() < 1e-12 && gq.xi[1].abs() < 1e-12);
        assert!((gq.gamma - 1.0).abs() < 1e-12);
        assert_eq!(gq.leader, Some(0));
    }

    #[test]
    fn two_node_symmetric() {
        let t = TopologySpec::new(2, vec![Edge::new(0, 1, 0.5), Edge::new(1, 0, 0.5)]).unwrap();
        let gq = build_graph_quantities(&t).unwrap();
        assert!((gq.xi[0] - 0.5).abs() < 1e-12 && (gq.xi[1] - 0.5).abs() < 1e-12);
        assert!((gq.gamma - 1.0).abs() < 1e-12);
        assert_eq!(gq.leader, None);
    }

    #[test]
    fn loop_topology_values() {
        let t = leader_loop(0.7);
        let gq = build_graph_quantities(&t).unwrap();
        assert!((gq.xi[0] - 1.0).abs() < 1e-10);
        assert!(gq.xi[1].abs() < 1e-10 && gq.xi[2].abs() < 1e-10);
        assert_eq!(gq.leader, Some(0));
        assert!((gq.mu_max - 1.05).abs() < 1e-12);
        assert!((gq.alpha_max - 0.7).abs() < 1e-15);
    }

    #[test]
    fn mu_max_client_server() {
        let t = client_server(0.7);
        assert!((mu_max_exact(&t) - 0.7).abs() < 1e-12);
        assert!((mu_max_gershgorin(&t, 1.0) - 1.4).abs() < 1e-15);
        let empty = TopologySpec::new(3, vec![]).unwrap();
        assert_eq!(mu_max_exact(&empty), 0.0);
        assert_eq!(mu_max_gershgorin(&empty, 1.0), 0.0);
    }

    #[test]
    fn star_leader_and_cycle_without() {
        let star = TopologySpec::new(
            4,
            vec![Edge::new(1, 0, 1.0), Edge::new(2, 0, 1.0), Edge::new(3, 0, 1.0)],
        )
        .unwrap();
        assert_eq!(find_leader(&star), Some(0));
        let cyc = TopologySpec::new(2, vec![Edge::new(0, 1, 1.0), Edge::new(1, 0, 1.0)]).unwrap();
        assert_eq!(find_leader(&cyc), None);
        // two sinks
        let two = TopologySpec::new(3, vec![Edge::new(2, 0, 1.0)]).unwrap();
        assert_eq!(find_leader(&two), None);
    }

    #[test]
    fn rejects_invalid_input() {
        assert!(TopologySpec::new(2, vec![Edge::new(0, 0, 1.0)]).is_err());
        assert!(TopologySpec::new(2, vec![Edge::new(0, 1, 1.0), Edge::new(0, 1, 2.0)]).is_err());
        assert!(TopologySpec::new(2, vec![Edge::new(0, 1, 0.0)]).is_err());
        assert!(TopologySpec::new(2, vec![Edge::new(0, 5, 1.0)]).is_err());
        assert!(TopologySpec::new(2, vec![]).unwrap().with_skews(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn disconnected_reports_error() {
        let t = TopologySpec::new(3, vec![Edge::new(1, 0, 1.0)]).unwrap();
        assert!(!is_connected(&t));
        assert!(matches!(build_graph_quantities(&t), Err(Error::NotConnected)));
        let single = TopologySpec::new(1, vec![]).unwrap();
        let gq = build_graph_quantities(&single).unwrap();
        assert_eq!(gq.leader, Some(0));
        assert!((gq.xi[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_is_weighted_harmonic_mean() {
        let t = TopologySpec::new(2, vec![Edge::new(0, 1, 0.5), Edge::new(1, 0, 0.5)])
            .unwrap()
            .with_skews(vec![1.0 + 1e-4, 1.0 - 2e-4])
            .unwrap();
        let gq = build_graph_quantities(&t).unwrap();
        let inv: f64 = 0.5 / (1.0 + 1e-4) + 0.5 / (1.0 - 2e-4);
        assert!((1.0 / gq.gamma - inv).abs() < 1e-14);
    }
}
