//! Greedy diffusion-network inference from cascades.
//!
//! Every adopter in a cascade is explained either by the background (a fixed
//! small log-weight) or by a single earlier adopter connected to it by an
//! inferred edge. Edges are added one at a time, each time picking the
//! candidate with the largest total log-likelihood improvement, until the
//! one-sided Vuong test on that candidate's per-cascade improvements is no
//! longer significant.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::CascadeSet;
use crate::metrics::Digraph;

/// Key used in serialized parent maps for background (external) infection.
pub const BACKGROUND: &str = "__background__";

/// Lower bound on the delay fed to the rayleigh model.
pub const RAYLEIGH_MIN_DELAY: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransmissionModel {
    Exponential,
    Rayleigh,
}

impl FromStr for TransmissionModel {
    type Err = NetinfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(TransmissionModel::Exponential),
            "rayleigh" => Ok(TransmissionModel::Rayleigh),
            other => Err(NetinfError::InvalidParams(format!("unknown transmission model {other:?}"))),
        }
    }
}

impl fmt::Display for TransmissionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransmissionModel::Exponential => "exponential",
            TransmissionModel::Rayleigh => "rayleigh",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceParams {
    pub transmission_model: TransmissionModel,
    pub lambda: f64,
    /// Log-weight of an infection explained by the background.
    pub epsilon_log_weight: f64,
    pub p_cutoff: f64,
    pub max_edges: Option<usize>,
    /// Candidates supported by fewer cascades than this get p = 1.
    pub min_cascades_for_test: usize,
}

impl Default for InferenceParams {
    fn default() -> Self {
        InferenceParams {
            transmission_model: TransmissionModel::Exponential,
            lambda: 1.0,
            epsilon_log_weight: 1e-9_f64.ln(),
            p_cutoff: 0.05,
            max_edges: None,
            min_cascades_for_test: 2,
        }
    }
}

impl InferenceParams {
    pub fn validate(&self) -> Result<(), NetinfError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(NetinfError::InvalidParams(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.p_cutoff > 0.0 && self.p_cutoff < 1.0) {
            return Err(NetinfError::InvalidParams(format!("p_cutoff must be in (0, 1), got {}", self.p_cutoff)));
        }
        if self.min_cascades_for_test == 0 {
            return Err(NetinfError::InvalidParams("min_cascades_for_test must be at least 1".into()));
        }
        let instantaneous = log_transmission_weight(0.0, self)?;
        if self.epsilon_log_weight.is_nan() || self.epsilon_log_weight >= instantaneous {
            return Err(NetinfError::InvalidParams(format!(
                "background log-weight {} must be below the zero-delay log-weight {instantaneous}",
                self.epsilon_log_weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetinfError {
    #[error("negative transmission delay {0}")]
    NegativeDelta(f64),
    #[error("self loop on node {0}")]
    SelfLoop(String),
    #[error("empty cascade set")]
    EmptyCascadeSet,
    #[error("invalid inference parameters: {0}")]
    InvalidParams(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("network does not match cascade set: {0}")]
    CascadeMismatch(String),
}

/// Log-likelihood of a transmission taking `delta_t` time units.
pub fn log_transmission_weight(delta_t: f64, params: &InferenceParams) -> Result<f64, NetinfError> {
    if delta_t < 0.0 || delta_t.is_nan() {
        return Err(NetinfError::NegativeDelta(delta_t));
    }
    let lambda = params.lambda;
    Ok(match params.transmission_model {
        TransmissionModel::Exponential => lambda.ln() - lambda * delta_t,
        TransmissionModel::Rayleigh => {
            let dt = delta_t.max(RAYLEIGH_MIN_DELAY);
            (dt * lambda).ln() - lambda * dt * dt / 2.0
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parent {
    Background,
    Node(usize),
}

/// Current parent and its log-weight for every event of every cascade.
#[derive(Clone, Debug, PartialEq)]
pub struct ParentAssignment {
    parents: Vec<Vec<Parent>>,
    weights: Vec<Vec<f64>>,
}

impl ParentAssignment {
    /// Everyone explained by the background.
    pub fn background(set: &CascadeSet, params: &InferenceParams) -> Self {
        ParentAssignment {
            parents: set.cascades.iter().map(|c| vec![Parent::Background; c.len()]).collect(),
            weights: set.cascades.iter().map(|c| vec![params.epsilon_log_weight; c.len()]).collect(),
        }
    }

    /// Parent of the event at `position` in cascade `cascade`.
    pub fn parent(&self, cascade: usize, position: usize) -> Parent {
        self.parents[cascade][position]
    }

    pub fn weight(&self, cascade: usize, position: usize) -> f64 {
        self.weights[cascade][position]
    }

    /// Sum of all assigned log-weights.
    pub fn total_log_likelihood(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }

    fn assign(&mut self, cascade: usize, position: usize, parent: Parent, weight: f64) {
        self.parents[cascade][position] = parent;
        self.weights[cascade][position] = weight;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CascadeDelta {
    pub cascade: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainEvaluation {
    pub total: f64,
    /// One entry per cascade where the source adopted strictly before the
    /// target, including clamped zeros.
    pub deltas: Vec<CascadeDelta>,
}

/// Improvement in total log-likelihood from adding `source -> target`.
pub fn marginal_gain(
    source: usize,
    target: usize,
    set: &CascadeSet,
    assignment: &ParentAssignment,
    params: &InferenceParams,
) -> Result<GainEvaluation, NetinfError> {
    if source == target {
        return Err(NetinfError::SelfLoop(set.nodes.get(source).cloned().unwrap_or_default()));
    }
    for n in [source, target] {
        if n >= set.nodes.len() {
            return Err(NetinfError::UnknownNode(n.to_string()));
        }
    }
    let mut deltas = Vec::new();
    for (ci, cascade) in set.cascades.iter().enumerate() {
        let Some(ts) = cascade.time_of(source) else { continue };
        let Some(pos) = cascade.events.iter().position(|e| e.node == target) else { continue };
        let tt = cascade.events[pos].time;
        if ts >= tt {
            continue;
        }
        let w = log_transmission_weight(tt - ts, params)?;
        deltas.push(CascadeDelta { cascade: ci, delta: (w - assignment.weight(ci, pos)).max(0.0) });
    }
    Ok(GainEvaluation { total: deltas.iter().map(|d| d.delta).sum(), deltas })
}

/// One-sided Vuong-style p-value for a vector of per-cascade improvements.
pub fn vuong_pvalue(deltas: &[f64], min_cascades: usize) -> f64 {
    let n = deltas.len();
    if n == 0 || n < min_cascades {
        return 1.0;
    }
    let mean = deltas.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 { 0.0 } else { (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    if sd == 0.0 {
        return if mean > 0.0 { 0.0 } else { 1.0 };
    }
    let z = mean * (n as f64).sqrt() / sd;
    upper_normal_tail(z)
}

/// 1 - Phi(z).
pub fn upper_normal_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEdge {
    pub source: String,
    pub target: String,
    pub gain: f64,
    /// 1-based insertion index.
    pub order: usize,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionNetwork {
    pub params: InferenceParams,
    pub nodes: Vec<String>,
    pub edges: Vec<DiffusionEdge>,
    /// cascade id -> adopter -> source label or [`BACKGROUND`].
    pub parents: BTreeMap<String, BTreeMap<String, String>>,
    /// Total assigned log-likelihood before the first edge and after each one.
    pub log_likelihood: Vec<f64>,
}

impl DiffusionNetwork {
    pub fn graph(&self) -> Digraph {
        let index = |label: &str| self.nodes.iter().position(|n| n == label).expect("edge endpoint in node list");
        Digraph::new(self.nodes.clone(), self.edges.iter().map(|e| (index(&e.source), index(&e.target))).collect())
    }

    pub fn has_edge(&self, source: &str, target: &str) -> bool {
        self.edges.iter().any(|e| e.source == source && e.target == target)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }
}

/// Observation of a strictly time-ordered (source, target) pair in one cascade.
#[derive(Clone, Copy)]
struct PairObs {
    cascade: u32,
    target_pos: u32,
    weight: f64,
}

fn pair_index(set: &CascadeSet, params: &InferenceParams) -> Result<Vec<Vec<PairObs>>, NetinfError> {
    let n = set.nodes.len();
    let mut pairs = vec![Vec::new(); n * n];
    for (ci, cascade) in set.cascades.iter().enumerate() {
        for (tp, target) in cascade.events.iter().enumerate() {
            for source in &cascade.events[..tp] {
                if source.time < target.time {
                    let weight = log_transmission_weight(target.time - source.time, params)?;
                    pairs[source.node * n + target.node].push(PairObs {
                        cascade: ci as u32,
                        target_pos: tp as u32,
                        weight,
                    });
                }
            }
        }
    }
    Ok(pairs)
}

/// Greedy network inference with the Vuong stopping rule.
pub fn infer_network(set: &CascadeSet, params: &InferenceParams) -> Result<DiffusionNetwork, NetinfError> {
    params.validate()?;
    if set.cascades.iter().all(|c| c.is_empty()) {
        return Err(NetinfError::EmptyCascadeSet);
    }
    let n = set.nodes.len();
    let pairs = pair_index(set, params)?;
    let mut assignment = ParentAssignment::background(set, params);
    let mut is_edge = vec![false; n * n];
    let mut edges = Vec::new();
    let mut trace = vec![assignment.total_log_likelihood()];

    loop {
        if params.max_edges.is_some_and(|m| edges.len() >= m) {
            break;
        }
        let best = (0..n * n)
            .into_par_iter()
            .filter(|&k| !is_edge[k] && !pairs[k].is_empty())
            .map(|k| {
                let gain: f64 = pairs[k]
                    .iter()
                    .map(|o| (o.weight - assignment.weight(o.cascade as usize, o.target_pos as usize)).max(0.0))
                    .sum();
                (k, gain)
            })
            .reduce_with(|a, b| {
                // Larger gain wins; equal gains go to the smaller (source, target).
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            });
        let Some((k, gain)) = best else { break };
        if gain.is_nan() || gain <= 0.0 {
            break;
        }
        let deltas: Vec<f64> = pairs[k]
            .iter()
            .map(|o| (o.weight - assignment.weight(o.cascade as usize, o.target_pos as usize)).max(0.0))
            .collect();
        let p_value = vuong_pvalue(&deltas, params.min_cascades_for_test);
        if p_value >= params.p_cutoff {
            break;
        }
        let (source, target) = (k / n, k % n);
        for o in &pairs[k] {
            let (c, pos) = (o.cascade as usize, o.target_pos as usize);
            if o.weight > assignment.weight(c, pos) {
                assignment.assign(c, pos, Parent::Node(source), o.weight);
            }
        }
        is_edge[k] = true;
        edges.push(DiffusionEdge {
            source: set.nodes[source].clone(),
            target: set.nodes[target].clone(),
            gain,
            order: edges.len() + 1,
            p_value,
        });
        trace.push(assignment.total_log_likelihood());
    }

    let parents = set
        .cascades
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let map = c
                .events
                .iter()
                .enumerate()
                .map(|(pos, e)| {
                    let parent = match assignment.parent(ci, pos) {
                        Parent::Background => BACKGROUND.to_string(),
                        Parent::Node(s) => set.nodes[s].clone(),
                    };
                    (set.nodes[e.node].clone(), parent)
                })
                .collect();
            (c.id.clone(), map)
        })
        .collect();

    Ok(DiffusionNetwork { params: params.clone(), nodes: set.nodes.clone(), edges, parents, log_likelihood: trace })
}

/// Per-cascade map adopter -> inferred source, background entries omitted.
pub fn policy_source_ties(
    network: &DiffusionNetwork,
    set: &CascadeSet,
) -> Result<BTreeMap<String, BTreeMap<String, String>>, NetinfError> {
    let mut ties = BTreeMap::new();
    for cascade in &set.cascades {
        let parents = network
            .parents
            .get(&cascade.id)
            .ok_or_else(|| NetinfError::CascadeMismatch(format!("no parent map for {}", cascade.id)))?;
        if parents.len() != cascade.len() {
            return Err(NetinfError::CascadeMismatch(format!("adopter count differs for {}", cascade.id)));
        }
        let mut map = BTreeMap::new();
        for e in &cascade.events {
            let label = &set.nodes[e.node];
            let parent = parents
                .get(label)
                .ok_or_else(|| NetinfError::CascadeMismatch(format!("{label} missing from {}", cascade.id)))?;
            if parent != BACKGROUND {
                map.insert(label.clone(), parent.clone());
            }
        }
        ties.insert(cascade.id.clone(), map);
    }
    if ties.len() != network.parents.len() {
        return Err(NetinfError::CascadeMismatch("network covers cascades not in the set".into()));
    }
    Ok(ties)
}
