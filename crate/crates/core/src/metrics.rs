//! Per-state measurements: centralities over an inferred network, static
//! innovativeness over the adoption table, contextual factor summaries, and
//! the quartile binning shared by every color scale.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AdoptionTable, CovariatePanel, StateCode, Topic, YearRange};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("pagerank did not converge within {0} iterations")]
    NonconvergencePastCap(usize),
    #[error("unknown factor {0:?}")]
    UnknownFactor(String),
    #[error("year {0} outside the covariate panel")]
    YearOutOfPanel(i32),
    #[error("unknown measurement {0:?}")]
    UnknownMeasurement(String),
    #[error("empty year range {0}")]
    EmptyRange(YearRange),
}

/// Directed simple graph over labelled nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Digraph {
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl Digraph {
    pub fn new(nodes: Vec<String>, mut edges: Vec<(usize, usize)>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let n = nodes.len();
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for &(s, t) in &edges {
            out_adj[s].push(t);
            in_adj[t].push(s);
        }
        Digraph { nodes, edges, out_adj, in_adj }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn successors(&self, node: usize) -> &[usize] {
        &self.out_adj[node]
    }

    pub fn predecessors(&self, node: usize) -> &[usize] {
        &self.in_adj[node]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measurement {
    Degree,
    InDegree,
    OutDegree,
    Closeness,
    PageRank,
    StaticInnovativeness,
    Factor(String),
}

impl Measurement {
    pub const CENTRALITIES: [Measurement; 5] = [
        Measurement::Degree,
        Measurement::InDegree,
        Measurement::OutDegree,
        Measurement::Closeness,
        Measurement::PageRank,
    ];

    pub fn name(&self) -> &str {
        match self {
            Measurement::Degree => "Degree",
            Measurement::InDegree => "In-Degree",
            Measurement::OutDegree => "Out-Degree",
            Measurement::Closeness => "Closeness",
            Measurement::PageRank => "PageRank",
            Measurement::StaticInnovativeness => "StaticInnovativeness",
            Measurement::Factor(f) => f,
        }
    }

    pub fn is_centrality(&self) -> bool {
        Measurement::CENTRALITIES.contains(self)
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measurement {
    type Err = MetricsError;

    /// Parses centrality and innovativeness names; anything else is an error
    /// since factor names must be checked against a panel.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "degree" => Measurement::Degree,
            "indegree" => Measurement::InDegree,
            "outdegree" => Measurement::OutDegree,
            "closeness" => Measurement::Closeness,
            "pagerank" => Measurement::PageRank,
            "staticinnovativeness" | "innovativeness" | "staticstateinnovativeness" => {
                Measurement::StaticInnovativeness
            }
            _ => return Err(MetricsError::UnknownMeasurement(s.to_string())),
        })
    }
}

/// What a metric vector was computed over.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricScope {
    pub topic: Option<Topic>,
    pub years: Option<YearRange>,
    pub basis: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMetricVector {
    pub measurement: String,
    pub values: BTreeMap<String, f64>,
    #[serde(default)]
    pub scope: MetricScope,
}

impl StateMetricVector {
    fn new(measurement: &str, values: BTreeMap<String, f64>) -> Self {
        StateMetricVector { measurement: measurement.to_string(), values, scope: MetricScope::default() }
    }

    pub fn with_scope(mut self, scope: MetricScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.values.get(label).copied()
    }

    /// Labels by descending value; ties by label.
    pub fn descending(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.values.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }
}

fn labelled(g: &Digraph, values: impl IntoIterator<Item = f64>) -> BTreeMap<String, f64> {
    g.nodes.iter().cloned().zip(values).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeKind {
    Total,
    In,
    Out,
}

/// Raw incident-edge counts.
pub fn degree_centrality(g: &Digraph, kind: DegreeKind) -> StateMetricVector {
    let counts = (0..g.node_count()).map(|v| {
        let (i, o) = (g.predecessors(v).len(), g.successors(v).len());
        (match kind {
            DegreeKind::Total => i + o,
            DegreeKind::In => i,
            DegreeKind::Out => o,
        }) as f64
    });
    let name = match kind {
        DegreeKind::Total => Measurement::Degree,
        DegreeKind::In => Measurement::InDegree,
        DegreeKind::Out => Measurement::OutDegree,
    };
    StateMetricVector::new(name.name(), labelled(g, counts))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClosenessDirection {
    /// Distances from every other node to the scored node.
    #[default]
    In,
    /// Distances from the scored node to every other node.
    Out,
}

fn bfs(start: usize, next: impl Fn(usize) -> Vec<usize>, n: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; n];
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].expect("queued nodes have distances");
        for v in next(u) {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Closeness with reachability scaling: `(r / sum d) * (r / (n - 1))` where
/// `r` counts nodes at finite distance.
pub fn closeness_centrality(g: &Digraph, direction: ClosenessDirection) -> StateMetricVector {
    let n = g.node_count();
    let values = (0..n).map(|u| {
        let dist = match direction {
            ClosenessDirection::In => bfs(u, |v| g.predecessors(v).to_vec(), n),
            ClosenessDirection::Out => bfs(u, |v| g.successors(v).to_vec(), n),
        };
        let (reach, total) = dist
            .iter()
            .enumerate()
            .filter(|&(v, _)| v != u)
            .filter_map(|(_, d)| *d)
            .fold((0usize, 0u64), |(r, t), d| (r + 1, t + u64::from(d)));
        if total == 0 || n < 2 {
            0.0
        } else {
            let r = reach as f64;
            (r / total as f64) * (r / (n - 1) as f64)
        }
    });
    StateMetricVector::new(Measurement::Closeness.name(), labelled(g, values))
}

pub const PAGERANK_MAX_ITERATIONS: usize = 10_000;

/// Power-iteration PageRank. Dangling mass is spread uniformly.
pub fn pagerank(g: &Digraph, damping: f64, tol: f64) -> Result<StateMetricVector, MetricsError> {
    let n = g.node_count();
    if n == 0 {
        return Ok(StateMetricVector::new(Measurement::PageRank.name(), BTreeMap::new()));
    }
    let nf = n as f64;
    let mut x = vec![1.0 / nf; n];
    for _ in 0..PAGERANK_MAX_ITERATIONS {
        let dangling: f64 = (0..n).filter(|&v| g.successors(v).is_empty()).map(|v| x[v]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        let mut next = vec![base; n];
        for (v, &xv) in x.iter().enumerate() {
            let out = g.successors(v);
            if !out.is_empty() {
                let share = damping * xv / out.len() as f64;
                for &t in out {
                    next[t] += share;
                }
            }
        }
        let change: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if change < tol {
            let sum: f64 = x.iter().sum();
            return Ok(StateMetricVector::new(
                Measurement::PageRank.name(),
                labelled(g, x.into_iter().map(|v| v / sum)),
            ));
        }
    }
    Err(MetricsError::NonconvergencePastCap(PAGERANK_MAX_ITERATIONS))
}

/// Number of years in `window` during which a policy was available to a
/// state: from the policy's first year through the adoption year (or the
/// window end when never adopted).
pub fn adoption_opportunities(first_year: i32, adopted: Option<i32>, window: YearRange) -> u32 {
    let lo = first_year.max(window.start);
    let hi = adopted.map_or(window.end, |a| a.min(window.end));
    if hi < lo {
        0
    } else {
        (hi - lo + 1) as u32
    }
}

/// Adoptions inside the window over annual adoption opportunities, per state.
pub fn static_innovativeness(
    table: &AdoptionTable,
    window: YearRange,
    topic: Option<Topic>,
) -> Result<StateMetricVector, MetricsError> {
    if window.is_empty() {
        return Err(MetricsError::EmptyRange(window));
    }
    let mut adoptions = [0u32; 50];
    let mut opportunities = [0u32; 50];
    for meta in table.policies.values().filter(|m| topic.is_none_or(|t| m.topic == t)) {
        let mut adopted: [Option<i32>; 50] = [None; 50];
        for r in table.records_for(&meta.policy_id) {
            adopted[r.state.index()] = Some(r.year);
        }
        for s in StateCode::all() {
            let i = s.index();
            if adopted[i].is_some_and(|y| window.contains(y)) {
                adoptions[i] += 1;
            }
            opportunities[i] += adoption_opportunities(meta.first_year, adopted[i], window);
        }
    }
    let values = StateCode::all()
        .map(|s| {
            let i = s.index();
            let score = if opportunities[i] == 0 { 0.0 } else { f64::from(adoptions[i]) / f64::from(opportunities[i]) };
            (s.to_string(), score)
        })
        .collect();
    Ok(StateMetricVector::new(Measurement::StaticInnovativeness.name(), values).with_scope(MetricScope {
        topic,
        years: Some(window),
        basis: None,
    }))
}

/// Min-max normalize then bin into quarters: `min(floor(v' / 0.25), 3)`.
/// Constant input puts everything in bin 0. Non-finite values get bin 0.
pub fn quartile_bins(values: &BTreeMap<String, f64>) -> BTreeMap<String, u8> {
    let finite = values.values().copied().filter(|v| v.is_finite());
    let (min, max) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    values
        .iter()
        .map(|(k, &v)| {
            let bin = if !v.is_finite() || max <= min {
                0
            } else {
                let norm = (v - min) / (max - min);
                ((norm / 0.25).floor() as i64).clamp(0, 3) as u8
            };
            (k.clone(), bin)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Basis {
    AllRange,
    YearsRange { start: i32, end: i32 },
    OneYear { year: i32 },
}

impl Basis {
    pub fn interval(&self, panel_years: YearRange) -> YearRange {
        match *self {
            Basis::AllRange => panel_years,
            Basis::YearsRange { start, end } => YearRange::new(start, end),
            Basis::OneYear { year } => YearRange::new(year, year),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Basis::AllRange => "all-range".into(),
            Basis::YearsRange { start, end } => format!("years-range({start}-{end})"),
            Basis::OneYear { year } => format!("one-year({year})"),
        }
    }
}

/// Per-state mean of a factor over the basis interval.
pub fn contextual_measurement(
    panel: &CovariatePanel,
    factor: &str,
    basis: Basis,
) -> Result<StateMetricVector, MetricsError> {
    let f = panel.factor_index(factor).ok_or_else(|| MetricsError::UnknownFactor(factor.to_string()))?;
    let interval = basis.interval(panel.years);
    if interval.is_empty() {
        return Err(MetricsError::EmptyRange(interval));
    }
    for y in [interval.start, interval.end] {
        if !panel.years.contains(y) {
            return Err(MetricsError::YearOutOfPanel(y));
        }
    }
    let values = panel
        .states
        .iter()
        .enumerate()
        .map(|(s, state)| {
            let ys = interval.years().map(|y| panel.value_at(s, panel.year_index(y).expect("checked above"), f));
            let (sum, n) = ys.filter(|v| !v.is_nan()).fold((0.0, 0usize), |(a, n), v| (a + v, n + 1));
            (state.to_string(), if n == 0 { f64::NAN } else { sum / n as f64 })
        })
        .collect();
    Ok(StateMetricVector::new(factor, values).with_scope(MetricScope {
        topic: None,
        years: Some(interval),
        basis: Some(basis.label()),
    }))
}

/// Cross-state mean of a factor for one year.
pub fn factor_mean(panel: &CovariatePanel, factor: &str, year: i32) -> Result<f64, MetricsError> {
    let v = contextual_measurement(panel, factor, Basis::OneYear { year })?;
    let finite: Vec<f64> = v.values.values().copied().filter(|v| !v.is_nan()).collect();
    Ok(if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 })
}
