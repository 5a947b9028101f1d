//! Continuous-time cascade simulation over a known directed graph.

use std::collections::BTreeSet;

use diffusion_core::cascade::{Cascade, CascadeEvent, CascadeSet};
use rand::Rng;
use rand_distr::{Distribution, Exp};

#[derive(Clone, Copy, Debug)]
pub struct SimParams {
    /// Rate of the exponential transmission delay.
    pub lambda: f64,
    /// Probability that an infected source transmits along an edge.
    pub transmission_prob: f64,
    /// Probability that a node is infected by the background, independent
    /// of the network, at a uniform time in the observation window.
    pub background_prob: f64,
    pub horizon: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams { lambda: 1.0, transmission_prob: 0.5, background_prob: 0.1, horizon: 10.0 }
    }
}

pub fn node_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
}

/// Simulates `count` cascades, each rooted at a uniformly chosen node at
/// time 0. Infection times are the earliest arrival over transmissions and
/// background events; only times within the horizon are observed.
pub fn simulate_cascades<R: Rng>(
    n: usize,
    edges: &[(usize, usize)],
    count: usize,
    params: SimParams,
    rng: &mut R,
) -> CascadeSet {
    let delay = Exp::new(params.lambda).expect("positive rate");
    let mut out_edges = vec![Vec::new(); n];
    for &(s, t) in edges {
        out_edges[s].push(t);
    }
    let mut cascades = Vec::with_capacity(count);
    for c in 0..count {
        let mut time = vec![f64::INFINITY; n];
        let root = rng.random_range(0..n);
        time[root] = 0.0;
        for (v, t) in time.iter_mut().enumerate() {
            if v != root && rng.random::<f64>() < params.background_prob {
                *t = rng.random::<f64>() * params.horizon;
            }
        }
        // Dijkstra over sampled edge delays; each edge is sampled once when its source settles.
        let mut settled = vec![false; n];
        loop {
            let next =
                (0..n).filter(|&v| !settled[v] && time[v].is_finite()).min_by(|&a, &b| time[a].total_cmp(&time[b]));
            let Some(u) = next else { break };
            settled[u] = true;
            for &v in &out_edges[u] {
                if !settled[v] && rng.random::<f64>() < params.transmission_prob {
                    let t = time[u] + delay.sample(rng);
                    if t < time[v] {
                        time[v] = t;
                    }
                }
            }
        }
        let events =
            (0..n).filter(|&v| time[v] <= params.horizon).map(|v| CascadeEvent { node: v, time: time[v] }).collect();
        cascades.push(Cascade::new(format!("sim{c:04}"), events));
    }
    CascadeSet::new(node_labels(n), cascades)
}

/// `m` distinct directed edges on `n` nodes, no self loops.
pub fn random_digraph<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<(usize, usize)> {
    assert!(m <= n * (n - 1));
    let mut edges = BTreeSet::new();
    while edges.len() < m {
        let s = rng.random_range(0..n);
        let t = rng.random_range(0..n);
        if s != t {
            edges.insert((s, t));
        }
    }
    edges.into_iter().collect()
}
