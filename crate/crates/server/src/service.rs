//! View operations over cached analysis snapshots, independent of transport.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use diffusion_core::cascade::{
    adoption_stats, build_cascades, policy_activity_order, policy_activity_order_in_topic, AdoptionStats, StatsFocus,
    Tally,
};
use diffusion_core::ingest::{
    filter_adoptions, AdoptionTable, CovariatePanel, IngestError, StateCode, Topic, YearRange, STATE_CODES,
};
use diffusion_core::metrics::{
    closeness_centrality, contextual_measurement, degree_centrality, factor_mean, pagerank, quartile_bins,
    static_innovativeness, Basis, ClosenessDirection, DegreeKind, Measurement, MetricsError, StateMetricVector,
};
use diffusion_core::netinf::{infer_network, policy_source_ties, DiffusionNetwork, InferenceParams};
use diffusion_core::store::{DataSnapshot, StoreError};
use diffusion_core::survival::{build_person_periods, fit_cox, hazard_report, CoxOptions, SurvivalError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache::{content_key, FlightCache};
use crate::config::{parse_state, parse_topic_choice, Method, PolicySort, StateSort, ViewConfig, CONFIG_KEYS};
use crate::error::ApiError;
use crate::payload::*;

pub const PAGERANK_DAMPING: f64 = 0.85;
pub const PAGERANK_TOLERANCE: f64 = 1e-10;

/// Immutable input data shared by every snapshot.
pub struct Dataset {
    /// Unfiltered adoption table.
    pub table: AdoptionTable,
    /// Imputed covariate panel, if one was loaded.
    pub panel: Option<CovariatePanel>,
    pub version: String,
}

/// Inferred network for one (topic, years, cutoff) scope with its per-policy
/// source ties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelNetwork {
    pub topic: Option<Topic>,
    pub years: YearRange,
    pub network: DiffusionNetwork,
    /// policy -> adopter -> inferred source, background adoptions omitted.
    pub source_ties: BTreeMap<String, BTreeMap<String, String>>,
}

/// The persisted, measurement-dependent part of a snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPart {
    pub metric: StateMetricVector,
    pub bins: BTreeMap<String, u8>,
    pub us_mean: Option<f64>,
}

/// Everything the views need for one configuration. Immutable once built.
pub struct AnalysisSnapshot {
    pub key: String,
    pub network: Arc<LevelNetwork>,
    pub filtered: AdoptionTable,
    pub stats: AdoptionStats,
    pub metric: Arc<MetricPart>,
}

pub struct Service {
    data: Arc<Dataset>,
    networks: FlightCache<LevelNetwork>,
    metrics: FlightCache<MetricPart>,
    snapshots: FlightCache<AnalysisSnapshot>,
    cox: FlightCache<CoxPayload>,
    cox_options: CoxOptions,
}

/// Counts of values computed and loaded from disk, per cache.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub networks_computed: usize,
    pub networks_loaded: usize,
    pub metrics_computed: usize,
    pub metrics_loaded: usize,
    pub snapshots_built: usize,
    pub cox_computed: usize,
    pub cox_loaded: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PrecomputeReport {
    pub networks: usize,
    pub snapshots: usize,
    pub cox_fits: usize,
    pub cox_failures: usize,
}

fn ingest_error(e: IngestError) -> ApiError {
    match e {
        IngestError::UnknownTopic(t) => ApiError::bad_request("UnknownTopic", format!("unknown topic {t:?}")),
        IngestError::EmptyRange(r) => ApiError::bad_request("EmptyRange", format!("empty year range {r}")),
        other => ApiError::bad_request("InvalidData", other.to_string()),
    }
}

fn metrics_error(e: MetricsError) -> ApiError {
    match e {
        MetricsError::UnknownFactor(f) => ApiError::bad_request("UnknownFactor", format!("unknown factor {f:?}")),
        MetricsError::YearOutOfPanel(y) => {
            ApiError::bad_request("YearOutOfPanel", format!("year {y} is outside the covariate panel"))
        }
        MetricsError::EmptyRange(r) => ApiError::bad_request("EmptyRange", format!("empty year range {r}")),
        MetricsError::UnknownMeasurement(m) => {
            ApiError::bad_request("UnknownMeasurement", format!("unknown measurement {m:?}"))
        }
        other => ApiError::internal("MetricFailed", other.to_string()),
    }
}

fn survival_code(e: &SurvivalError) -> &'static str {
    match e {
        SurvivalError::UnknownPolicy(_) => "UnknownPolicy",
        SurvivalError::PanelCoverageGap { .. } => "PanelCoverageGap",
        SurvivalError::NoEvents => "NoEvents",
        SurvivalError::NoUsableCovariates => "NoUsableCovariates",
        SurvivalError::RaggedRow { .. } => "RaggedRow",
    }
}

fn no_covariates() -> ApiError {
    ApiError::new(409, "NoCovariates", "no covariate panel is loaded")
}

fn render<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("payload serializes")
}

/// Query parameters with duplicate and unknown keys rejected.
fn params_map(pairs: &[(String, String)], allowed: &[&str]) -> Result<BTreeMap<String, String>, ApiError> {
    let mut map = BTreeMap::new();
    for (k, v) in pairs {
        if !allowed.contains(&k.as_str()) {
            return Err(ApiError::bad_request("UnknownParameter", format!("unknown query parameter {k:?}")));
        }
        if map.insert(k.clone(), v.clone()).is_some() {
            return Err(ApiError::bad_request("DuplicateParameter", format!("query parameter {k:?} given twice")));
        }
    }
    Ok(map)
}

fn with_config(extra: &[&'static str]) -> Vec<&'static str> {
    CONFIG_KEYS.iter().chain(extra).copied().collect()
}

fn parse_bool(params: &BTreeMap<String, String>, key: &str) -> Result<bool, ApiError> {
    match params.get(key).map(|v| v.trim().to_ascii_lowercase()) {
        None => Ok(false),
        Some(v) if matches!(v.as_str(), "true" | "1" | "yes") => Ok(true),
        Some(v) if matches!(v.as_str(), "false" | "0" | "no") => Ok(false),
        Some(v) => Err(ApiError::bad_request("InvalidParameter", format!("{key} must be a boolean, got {v:?}"))),
    }
}

/// Groups edges touching each focus state by partner and tags the relation
/// from the focus state's point of view.
fn tag_patterns(edges: &[EdgeRef], focus: &[String], policy: Option<&str>) -> Vec<PatternEntry> {
    let mut out = Vec::new();
    for f in focus {
        let mut by_partner: BTreeMap<&str, Vec<EdgeRef>> = BTreeMap::new();
        for e in edges {
            if e.source == *f && e.target != *f {
                by_partner.entry(e.target.as_str()).or_default().push(e.clone());
            } else if e.target == *f && e.source != *f {
                by_partner.entry(e.source.as_str()).or_default().push(e.clone());
            }
        }
        for (partner, group) in by_partner {
            let outgoing = group.iter().any(|e| e.source == *f);
            let incoming = group.iter().any(|e| e.target == *f);
            let relation = match (outgoing, incoming) {
                (true, true) => Relation::Bidirectional,
                (true, false) => Relation::Outgoing,
                _ => Relation::Incoming,
            };
            out.push(PatternEntry {
                policy_id: policy.map(str::to_string),
                state: f.clone(),
                partner: partner.to_string(),
                relation,
                edges: group,
            });
        }
    }
    out
}

fn network_edges(network: &DiffusionNetwork) -> Vec<EdgeRef> {
    network
        .edges
        .iter()
        .map(|e| EdgeRef {
            source: e.source.clone(),
            target: e.target.clone(),
            gain: Some(e.gain),
            order: Some(e.order),
        })
        .collect()
}

fn tie_edges(ties: &BTreeMap<String, String>) -> Vec<EdgeRef> {
    ties.iter()
        .map(|(adopter, source)| EdgeRef { source: source.clone(), target: adopter.clone(), gain: None, order: None })
        .collect()
}

fn mirror_y_max(series: &[MirrorBar], shared: bool) -> Domain {
    let c = series.iter().map(|b| b.creations).max().unwrap_or(0);
    let a = series.iter().map(|b| b.adoptions).max().unwrap_or(0);
    if shared {
        Domain { creations: c.max(a), adoptions: c.max(a) }
    } else {
        Domain { creations: c, adoptions: a }
    }
}

impl Service {
    pub fn new(data: Dataset, cache_dir: Option<&Path>) -> Self {
        Service {
            data: Arc::new(data),
            networks: FlightCache::new("networks", cache_dir),
            metrics: FlightCache::new("metrics", cache_dir),
            snapshots: FlightCache::new("snapshots", None),
            cox: FlightCache::new("cox", cache_dir),
            cox_options: CoxOptions::default(),
        }
    }

    pub fn from_snapshot(snapshot: DataSnapshot, cache_dir: Option<&Path>) -> Self {
        let version = snapshot.data_version();
        Service::new(Dataset { table: snapshot.table, panel: snapshot.panel, version }, cache_dir)
    }

    /// Loads the normalized tables from `data_dir`; the cache lives in
    /// `data_dir/cache`.
    pub fn open(data_dir: &Path) -> Result<Self, StoreError> {
        let snapshot = DataSnapshot::load(data_dir)?;
        Ok(Service::from_snapshot(snapshot, Some(&data_dir.join("cache"))))
    }

    pub fn cache_dir(data_dir: &Path) -> PathBuf {
        data_dir.join("cache")
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn cache_stats(&self) -> CacheStats {
        CacheStats {
            networks_computed: self.networks.computed(),
            networks_loaded: self.networks.loaded(),
            metrics_computed: self.metrics.computed(),
            metrics_loaded: self.metrics.loaded(),
            snapshots_built: self.snapshots.computed(),
            cox_computed: self.cox.computed(),
            cox_loaded: self.cox.loaded(),
        }
    }

    fn factors(&self) -> &[String] {
        self.data.panel.as_ref().map_or(&[], |p| p.factors.as_slice())
    }

    pub fn config(&self, params: &BTreeMap<String, String>) -> Result<ViewConfig, ApiError> {
        ViewConfig::from_params(params, self.factors())
    }

    fn policy_exists(&self, id: &str) -> Result<(), ApiError> {
        if self.data.table.policies.contains_key(id) {
            Ok(())
        } else {
            Err(ApiError::not_found("UnknownPolicy", format!("unknown policy {id:?}")))
        }
    }

    /// Inferred network for a scope, computed at most once and persisted.
    pub fn level_network(
        &self,
        topic: Option<Topic>,
        years: YearRange,
        cutoff: f64,
    ) -> Result<Arc<LevelNetwork>, ApiError> {
        let key = content_key("network", &(&self.data.version, topic.map(|t| t.label()), years, cutoff));
        self.networks.get_or_compute_persisted(&key, || {
            let filtered = filter_adoptions(&self.data.table, topic, years).map_err(ingest_error)?;
            let set = build_cascades(&filtered);
            let params = InferenceParams { p_cutoff: cutoff, ..InferenceParams::default() };
            let network = if set.total_events() == 0 {
                DiffusionNetwork {
                    params,
                    nodes: set.nodes.clone(),
                    edges: Vec::new(),
                    parents: BTreeMap::new(),
                    log_likelihood: Vec::new(),
                }
            } else {
                infer_network(&set, &params).map_err(|e| ApiError::internal("InferenceFailed", e.to_string()))?
            };
            let source_ties =
                policy_source_ties(&network, &set).map_err(|e| ApiError::internal("InferenceFailed", e.to_string()))?;
            Ok(LevelNetwork { topic, years, network, source_ties })
        })
    }

    fn metric_part(&self, cfg: &ViewConfig, network: &LevelNetwork) -> Result<Arc<MetricPart>, ApiError> {
        let key = content_key("metric", &(&self.data.version, cfg.compute_key()));
        self.metrics.get_or_compute_persisted(&key, || {
            let (metric, us_mean) = match cfg.method {
                Method::NetworkCentrality => {
                    let g = network.network.graph();
                    let m: Measurement = cfg.measurement.parse().map_err(metrics_error)?;
                    let v = match m {
                        Measurement::Degree => degree_centrality(&g, DegreeKind::Total),
                        Measurement::InDegree => degree_centrality(&g, DegreeKind::In),
                        Measurement::OutDegree => degree_centrality(&g, DegreeKind::Out),
                        Measurement::Closeness => closeness_centrality(&g, ClosenessDirection::In),
                        Measurement::PageRank => {
                            pagerank(&g, PAGERANK_DAMPING, PAGERANK_TOLERANCE).map_err(metrics_error)?
                        }
                        other => {
                            return Err(ApiError::bad_request(
                                "UnknownMeasurement",
                                format!("{other} is not a centrality"),
                            ))
                        }
                    };
                    let scope = diffusion_core::metrics::MetricScope {
                        topic: cfg.topic,
                        years: Some(cfg.year_range),
                        basis: None,
                    };
                    (v.with_scope(scope), None)
                }
                Method::StaticInnovativeness => {
                    (static_innovativeness(&self.data.table, cfg.year_range, cfg.topic).map_err(metrics_error)?, None)
                }
                Method::ContextualFactor => {
                    let panel = self.data.panel.as_ref().ok_or_else(no_covariates)?;
                    let basis =
                        cfg.basis.unwrap_or(Basis::YearsRange { start: cfg.year_range.start, end: cfg.year_range.end });
                    let v = contextual_measurement(panel, &cfg.measurement, basis).map_err(metrics_error)?;
                    let mean = match basis {
                        Basis::OneYear { year } => {
                            Some(factor_mean(panel, &cfg.measurement, year).map_err(metrics_error)?)
                        }
                        _ => None,
                    };
                    (v, mean)
                }
            };
            let bins = quartile_bins(&metric.values);
            Ok(MetricPart { metric, bins, us_mean })
        })
    }

    /// The snapshot for a configuration; sort orders do not affect it.
    pub fn snapshot(&self, cfg: &ViewConfig) -> Result<Arc<AnalysisSnapshot>, ApiError> {
        let key = content_key("snapshot", &(&self.data.version, cfg.compute_key()));
        self.snapshots.get_or_compute(&key, || {
            let filtered = filter_adoptions(&self.data.table, cfg.topic, cfg.year_range).map_err(ingest_error)?;
            let stats =
                adoption_stats(&filtered, None).map_err(|e| ApiError::bad_request("UnknownFocus", e.to_string()))?;
            let network = self.level_network(cfg.topic, cfg.year_range, cfg.cutoff)?;
            let metric = self.metric_part(cfg, &network)?;
            Ok(AnalysisSnapshot { key: key.clone(), network, filtered, stats, metric })
        })
    }

    fn state_order(&self, snap: &AnalysisSnapshot, sort: StateSort) -> Vec<String> {
        match sort {
            StateSort::Alphabetical => STATE_CODES.iter().map(|s| s.to_string()).collect(),
            StateSort::MeasurementDesc => {
                let mut order: Vec<String> =
                    snap.metric.metric.descending().into_iter().map(|(s, _)| s.to_string()).collect();
                let seen: BTreeSet<String> = order.iter().cloned().collect();
                order.extend(STATE_CODES.iter().filter(|s| !seen.contains(**s)).map(|s| s.to_string()));
                order
            }
        }
    }

    /// Analyzed topics in the configured policy sort.
    fn topic_order(&self, snap: &AnalysisSnapshot, sort: PolicySort) -> Vec<Topic> {
        let total = |t: &Topic| snap.stats.by_topic.get(t).map_or(0, Tally::total);
        let mut topics = Topic::analyzed();
        match sort {
            PolicySort::Alphabetical => topics,
            PolicySort::TotalAdoptionsDesc => {
                topics.sort_by(|a, b| total(b).cmp(&total(a)).then_with(|| a.label().cmp(b.label())));
                topics
            }
            PolicySort::PolicyActivity(state) => {
                policy_activity_order(&snap.filtered, state).into_iter().map(|(t, _)| t).collect()
            }
        }
    }

    fn policy_order(&self, snap: &AnalysisSnapshot, topic: Topic, sort: PolicySort) -> Vec<String> {
        let table = &snap.filtered;
        let name = |id: &str| table.policies[id].display_name.clone();
        let mut ids: Vec<String> =
            table.policies.values().filter(|p| p.topic == topic).map(|p| p.policy_id.clone()).collect();
        match sort {
            PolicySort::Alphabetical => {
                ids.sort_by(|a, b| name(a).cmp(&name(b)).then_with(|| a.cmp(b)));
                ids
            }
            PolicySort::TotalAdoptionsDesc => {
                let count = |id: &str| table.records_for(id).count();
                ids.sort_by(|a, b| count(b).cmp(&count(a)).then_with(|| name(a).cmp(&name(b))).then_with(|| a.cmp(b)));
                ids
            }
            PolicySort::PolicyActivity(state) => policy_activity_order_in_topic(table, state, topic),
        }
    }

    pub fn options(&self) -> Value {
        let factors = self.factors();
        let methods: Vec<Value> = Method::ALL
            .iter()
            .map(|m| {
                let measurements: Vec<String> = match m {
                    Method::NetworkCentrality => {
                        Measurement::CENTRALITIES.iter().map(|c| c.name().to_string()).collect()
                    }
                    Method::StaticInnovativeness => vec![Measurement::StaticInnovativeness.name().to_string()],
                    Method::ContextualFactor => factors.to_vec(),
                };
                json!({ "method": m.name(), "measurements": measurements })
            })
            .collect();
        let topics: Vec<&str> = std::iter::once("ALL").chain(Topic::analyzed().iter().map(|t| t.label())).collect();
        json!({
            "data_version": self.data.version,
            "defaults": ViewConfig::default(),
            "default_basis": "years-range",
            "topics": topics,
            "methods": methods,
            "bases": ["all-range", "years-range", "one-year"],
            "state_sorts": ["alphabetical", "measurement-desc"],
            "policy_sorts": ["alphabetical", "total-adoptions-desc", "policy-activity(<STATE>)"],
            "year_span": self.data.table.year_span(),
            "panel_years": self.data.panel.as_ref().map(|p| p.years),
            "states": STATE_CODES.as_slice(),
            "policies": self.data.table.policies.len(),
            "records": self.data.table.records.len(),
        })
    }

    fn focus_states(params: &BTreeMap<String, String>) -> Result<Vec<String>, ApiError> {
        let mut states = BTreeSet::new();
        if let Some(s) = params.get("state") {
            states.insert(parse_state(s)?.to_string());
        }
        if let Some(list) = params.get("states") {
            for s in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                states.insert(parse_state(s)?.to_string());
            }
        }
        Ok(states.into_iter().collect())
    }

    fn focus_topic(params: &BTreeMap<String, String>) -> Result<Option<Topic>, ApiError> {
        match params.get("focus_topic") {
            None => Ok(None),
            Some(t) => parse_topic_choice(t)?
                .map(Some)
                .ok_or_else(|| ApiError::bad_request("UnknownTopic", "focus_topic must name one topic")),
        }
    }

    pub fn patterns(&self, params: &BTreeMap<String, String>) -> Result<PatternsPayload, ApiError> {
        let cfg = self.config(params)?;
        let states = Self::focus_states(params)?;
        if states.is_empty() {
            return Err(ApiError::bad_request("MissingFocus", "patterns need a focus state (state or states)"));
        }
        let topic_focus = Self::focus_topic(params)?;
        let policy = params.get("policy").cloned();
        if let Some(p) = &policy {
            self.policy_exists(p)?;
        }
        let snap = self.snapshot(&cfg)?;
        let upper = tag_patterns(&network_edges(&snap.network.network), &states, None);

        let (lower_kind, lower) = if let (None, Some(t), None) = (cfg.topic, topic_focus, &policy) {
            let level = self.level_network(Some(t), cfg.year_range, cfg.cutoff)?;
            ("topic-network", tag_patterns(&network_edges(&level.network), &states, None))
        } else if let Some(p) = &policy {
            let ties = snap.network.source_ties.get(p).map(tie_edges).unwrap_or_default();
            ("source-ties", tag_patterns(&ties, &states, Some(p)))
        } else if cfg.topic.is_some() {
            let lower = snap
                .network
                .source_ties
                .iter()
                .flat_map(|(p, ties)| tag_patterns(&tie_edges(ties), &states, Some(p)))
                .collect();
            ("source-ties", lower)
        } else {
            ("none", Vec::new())
        };

        Ok(PatternsPayload {
            focus: Focus { states, topic: topic_focus.map(|t| t.label().to_string()), policy },
            upper_level: cfg.topic.map_or("overall".to_string(), |t| t.label().to_string()),
            lower_kind: lower_kind.to_string(),
            upper,
            lower,
            config: cfg,
        })
    }

    fn matrix_row(
        key: String,
        label: String,
        kind: &str,
        order: &[String],
        tallies: &BTreeMap<StateCode, Tally>,
        flags: Option<&BTreeMap<StateCode, bool>>,
    ) -> MatrixRow {
        let cell_total =
            |s: &str| -> u32 { s.parse::<StateCode>().ok().and_then(|s| tallies.get(&s)).map_or(0, Tally::total) };
        // Bins over the active cells only, so a lone adoption is a degenerate bin 0.
        let active: BTreeMap<String, f64> =
            order.iter().filter(|s| cell_total(s) > 0).map(|s| (s.clone(), f64::from(cell_total(s)))).collect();
        let bins = quartile_bins(&active);
        let cells: Vec<MatrixCell> = order
            .iter()
            .map(|s| {
                let code: StateCode = s.parse().expect("state order holds valid codes");
                let t = tallies.get(&code).copied().unwrap_or_default();
                let initiator = flags.map(|f| f.get(&code).copied().unwrap_or(false));
                MatrixCell {
                    state: s.clone(),
                    creations: t.creations,
                    adoptions: t.adoptions,
                    bin: bins.get(s).copied(),
                    initiator,
                    adopter: flags.map(|f| f.contains_key(&code)),
                }
            })
            .collect();
        let total = cells.iter().map(|c| c.creations + c.adoptions).sum();
        MatrixRow { key, label, kind: kind.to_string(), total, cells }
    }

    pub fn matrix(&self, params: &BTreeMap<String, String>) -> Result<MatrixPayload, ApiError> {
        let cfg = self.config(params)?;
        let snap = self.snapshot(&cfg)?;
        let states = self.state_order(&snap, cfg.state_sort);
        let table = &snap.filtered;
        let rows: Vec<MatrixRow> = match cfg.topic {
            None => {
                let mut by_topic: BTreeMap<Topic, BTreeMap<StateCode, Tally>> = BTreeMap::new();
                for r in &table.records {
                    let meta = &table.policies[&r.policy_id];
                    let t = by_topic.entry(meta.topic).or_default().entry(r.state).or_default();
                    if r.year == meta.first_year {
                        t.creations += 1;
                    } else {
                        t.adoptions += 1;
                    }
                }
                self.topic_order(&snap, cfg.policy_sort)
                    .into_iter()
                    .map(|t| {
                        let empty = BTreeMap::new();
                        let tallies = by_topic.get(&t).unwrap_or(&empty);
                        Self::matrix_row(t.label().to_string(), t.label().to_string(), "topic", &states, tallies, None)
                    })
                    .collect()
            }
            Some(topic) => self
                .policy_order(&snap, topic, cfg.policy_sort)
                .into_iter()
                .map(|id| {
                    let meta = &table.policies[&id];
                    let mut tallies: BTreeMap<StateCode, Tally> = BTreeMap::new();
                    let mut flags: BTreeMap<StateCode, bool> = BTreeMap::new();
                    for r in table.records_for(&id) {
                        let t = tallies.entry(r.state).or_default();
                        let creation = r.year == meta.first_year;
                        if creation {
                            t.creations += 1;
                        } else {
                            t.adoptions += 1;
                        }
                        flags.insert(r.state, creation);
                    }
                    Self::matrix_row(id.clone(), meta.display_name.clone(), "policy", &states, &tallies, Some(&flags))
                })
                .collect(),
        };
        let mut column_totals: BTreeMap<String, u32> = states.iter().map(|s| (s.clone(), 0)).collect();
        for row in &rows {
            for c in &row.cells {
                *column_totals.get_mut(&c.state).expect("state in order") += c.creations + c.adoptions;
            }
        }
        Ok(MatrixPayload { config: cfg, states, rows, column_totals })
    }

    pub fn map(&self, params: &BTreeMap<String, String>) -> Result<MapPayload, ApiError> {
        let cfg = self.config(params)?;
        let snap = self.snapshot(&cfg)?;
        let part = &snap.metric;
        Ok(MapPayload {
            measurement: part.metric.measurement.clone(),
            scope: part.metric.scope.clone(),
            values: part.metric.values.clone(),
            bins: part.bins.clone(),
            order: self.state_order(&snap, cfg.state_sort),
            us_mean: part.us_mean,
            config: cfg,
        })
    }

    /// Single stats focus for the year and state tabs.
    fn stats_focus(&self, params: &BTreeMap<String, String>) -> Result<(Option<StatsFocus>, Focus), ApiError> {
        let state = params.get("state").map(|s| parse_state(s)).transpose()?;
        let policy = params.get("policy").cloned();
        let topic = Self::focus_topic(params)?;
        if let Some(p) = &policy {
            self.policy_exists(p)?;
        }
        let focus = Focus {
            states: state.iter().map(|s| s.to_string()).collect(),
            topic: topic.map(|t| t.label().to_string()),
            policy: policy.clone(),
        };
        let given = [state.is_some(), policy.is_some(), topic.is_some()].iter().filter(|b| **b).count();
        if given > 1 {
            return Err(ApiError::bad_request("UnknownFocus", "give at most one of state, policy, focus_topic"));
        }
        let f = state.map(StatsFocus::State).or(policy.map(StatsFocus::Policy)).or(topic.map(StatsFocus::Topic));
        Ok((f, focus))
    }

    fn focused_stats(snap: &AnalysisSnapshot, focus: Option<&StatsFocus>) -> Result<AdoptionStats, ApiError> {
        match focus {
            // A policy outside the filtered scope has no adoptions in it.
            Some(StatsFocus::Policy(p)) if !snap.filtered.policies.contains_key(p) => Ok(AdoptionStats::default()),
            None => Ok(snap.stats.clone()),
            f => adoption_stats(&snap.filtered, f).map_err(|e| ApiError::bad_request("UnknownFocus", e.to_string())),
        }
    }

    pub fn adoption_view(&self, tab: &str, params: &BTreeMap<String, String>) -> Result<Value, ApiError> {
        let cfg = self.config(params)?;
        match tab {
            "year" | "state" => {
                let (focus, echo) = self.stats_focus(params)?;
                let shared = parse_bool(params, "shared_domain")?;
                let snap = self.snapshot(&cfg)?;
                let stats = Self::focused_stats(&snap, focus.as_ref())?;
                let bar = |key: String, t: &Tally| MirrorBar { key, creations: t.creations, adoptions: t.adoptions };
                let series: Vec<MirrorBar> = if tab == "year" {
                    stats.by_year.iter().map(|(y, t)| bar(y.to_string(), t)).collect()
                } else {
                    self.state_order(&snap, cfg.state_sort)
                        .into_iter()
                        .filter_map(|s| {
                            let code: StateCode = s.parse().ok()?;
                            stats.by_state.get(&code).map(|t| bar(s, t))
                        })
                        .collect()
                };
                let y_max = mirror_y_max(&series, shared);
                Ok(serde_json::to_value(MirrorPayload {
                    config: cfg,
                    tab: tab.into(),
                    focus: echo,
                    shared_domain: shared,
                    y_max,
                    series,
                })
                .expect("payload serializes"))
            }
            "topic" => {
                let state = params.get("state").map(|s| parse_state(s)).transpose()?;
                let snap = self.snapshot(&cfg)?;
                let table = &snap.filtered;
                let mut unique: BTreeMap<Topic, BTreeSet<&str>> = BTreeMap::new();
                let mut introduced: BTreeMap<Topic, u32> = BTreeMap::new();
                for r in table.records.iter().filter(|r| state.is_none_or(|s| r.state == s)) {
                    let meta = &table.policies[&r.policy_id];
                    unique.entry(meta.topic).or_default().insert(r.policy_id.as_str());
                    if r.year == meta.first_year {
                        *introduced.entry(meta.topic).or_default() += 1;
                    }
                }
                let bars = self
                    .topic_order(&snap, cfg.policy_sort)
                    .into_iter()
                    .map(|t| {
                        let n = unique.get(&t).map_or(0, |s| s.len() as u32);
                        let intro = introduced.get(&t).copied().unwrap_or(0);
                        TopicBar {
                            topic: t.label().to_string(),
                            policies: n,
                            introduced: state.map(|_| intro),
                            adopted: state.map(|_| n - intro),
                        }
                    })
                    .collect();
                let focus = Focus { states: state.iter().map(|s| s.to_string()).collect(), topic: None, policy: None };
                Ok(serde_json::to_value(TopicPayload { config: cfg, tab: tab.into(), focus, bars })
                    .expect("payload serializes"))
            }
            "context" => Ok(serde_json::to_value(self.context_view(cfg, params)?).expect("payload serializes")),
            other => Err(ApiError::not_found("NotFound", format!("unknown adoption tab {other:?}"))),
        }
    }

    fn context_view(&self, cfg: ViewConfig, params: &BTreeMap<String, String>) -> Result<ContextPayload, ApiError> {
        let panel = self.data.panel.as_ref().ok_or_else(no_covariates)?;
        let policy =
            params.get("policy").ok_or_else(|| ApiError::bad_request("MissingFocus", "context tab needs policy"))?;
        self.policy_exists(policy)?;
        let state = parse_state(
            params.get("state").ok_or_else(|| ApiError::bad_request("MissingFocus", "context tab needs state"))?,
        )?;
        let requested = match (params.get("factor"), cfg.method) {
            (Some(f), _) => f.clone(),
            (None, Method::ContextualFactor) => cfg.measurement.clone(),
            (None, _) => return Err(ApiError::bad_request("MissingFocus", "context tab needs factor")),
        };
        let factor = panel
            .factors
            .iter()
            .find(|f| f.eq_ignore_ascii_case(requested.trim()))
            .cloned()
            .ok_or_else(|| ApiError::bad_request("UnknownFactor", format!("unknown factor {requested:?}")))?;
        let years =
            YearRange::new(cfg.year_range.start.max(panel.years.start), cfg.year_range.end.min(panel.years.end));
        if years.is_empty() {
            return Err(ApiError::bad_request(
                "YearOutOfPanel",
                format!("{} does not overlap the covariate panel", cfg.year_range),
            ));
        }
        let value = |s: StateCode, y: i32| panel.get(s, y, &factor).unwrap_or(f64::NAN);
        let series = years.years().map(|y| YearValue { year: y, value: value(state, y) }).collect();
        let us_mean = years
            .years()
            .map(|y| Ok(YearValue { year: y, value: factor_mean(panel, &factor, y).map_err(metrics_error)? }))
            .collect::<Result<Vec<_>, ApiError>>()?;

        let meta = &self.data.table.policies[policy];
        let mut by_year: BTreeMap<i32, Vec<(f64, StateCode)>> = BTreeMap::new();
        for r in self.data.table.records_for(policy).filter(|r| years.contains(r.year)) {
            by_year.entry(r.year).or_default().push((value(r.state, r.year), r.state));
        }
        let mut boxes = Vec::new();
        for (year, mut group) in by_year {
            group.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (stack, (v, s)) in group.into_iter().enumerate() {
                boxes.push(AdoptionBox {
                    state: s.to_string(),
                    year,
                    value: v,
                    first_year: year == meta.first_year,
                    stack,
                });
            }
        }
        Ok(ContextPayload {
            tab: "context".into(),
            policy_id: policy.clone(),
            policy_name: meta.display_name.clone(),
            state: state.to_string(),
            factor,
            years,
            series,
            us_mean,
            boxes,
            config: cfg,
        })
    }

    /// Hazard report for one policy; fit failures are part of the payload.
    pub fn cox(&self, policy_id: &str) -> Result<Arc<CoxPayload>, ApiError> {
        self.policy_exists(policy_id)?;
        let panel = self.data.panel.as_ref().ok_or_else(no_covariates)?;
        let key = content_key("cox", &(&self.data.version, policy_id, &self.cox_options));
        self.cox.get_or_compute_persisted(&key, || {
            let meta = &self.data.table.policies[policy_id];
            let mut payload = CoxPayload {
                policy_id: policy_id.to_string(),
                policy_name: meta.display_name.clone(),
                topic: meta.topic.label().to_string(),
                ok: false,
                converged: false,
                status: None,
                iterations: None,
                n_rows: None,
                n_events: None,
                factors: Vec::new(),
                error: None,
            };
            match build_person_periods(policy_id, &self.data.table, panel)
                .and_then(|pp| fit_cox(&pp, &self.cox_options))
            {
                Ok(fit) => {
                    payload.ok = true;
                    payload.converged = fit.converged;
                    payload.status = Some(fit.status);
                    payload.iterations = Some(fit.iterations);
                    payload.n_rows = Some(fit.n_rows);
                    payload.n_events = Some(fit.n_events);
                    payload.factors = hazard_report(&fit);
                }
                Err(e) => payload.error = Some(ApiError::new(200, survival_code(&e), e.to_string())),
            }
            Ok(payload)
        })
    }

    pub fn search(&self, query: &str) -> Result<SearchPayload, ApiError> {
        let q = query.trim().to_lowercase();
        if q.is_empty() {
            return Err(ApiError::bad_request("EmptyKeyword", "search needs a non-empty keyword"));
        }
        let mut groups = Vec::new();
        for topic in Topic::analyzed() {
            let topic_match = topic.label().to_lowercase().contains(&q);
            let mut policies: Vec<PolicyHit> = self
                .data
                .table
                .policies
                .values()
                .filter(|p| p.topic == topic && (topic_match || p.display_name.to_lowercase().contains(&q)))
                .map(|p| PolicyHit { policy_id: p.policy_id.clone(), name: p.display_name.clone() })
                .collect();
            policies.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.policy_id.cmp(&b.policy_id)));
            if topic_match || !policies.is_empty() {
                groups.push(SearchGroup { topic: topic.label().to_string(), topic_match, policies });
            }
        }
        Ok(SearchPayload { query: query.to_string(), groups })
    }

    /// Routes an `/api/...` request. `path` excludes the `/api/` prefix.
    /// Returns the status code and JSON body.
    pub fn dispatch(&self, path: &str, query: &[(String, String)]) -> (u16, Vec<u8>) {
        match self.route(path.trim_matches('/'), query) {
            Ok(body) => (200, body),
            Err(e) => (e.status, e.body()),
        }
    }

    fn route(&self, path: &str, query: &[(String, String)]) -> Result<Vec<u8>, ApiError> {
        let segments: Vec<&str> = path.split('/').collect();
        match segments.as_slice() {
            ["config", "options"] => {
                params_map(query, &[])?;
                Ok(render(&self.options()))
            }
            ["patterns"] => Ok(render(
                &self.patterns(&params_map(query, &with_config(&["state", "states", "focus_topic", "policy"]))?)?,
            )),
            ["matrix"] => Ok(render(&self.matrix(&params_map(query, &CONFIG_KEYS)?)?)),
            ["map"] => Ok(render(&self.map(&params_map(query, &CONFIG_KEYS)?)?)),
            ["adoptions", tab] => {
                let extra: &[&'static str] = match *tab {
                    "year" | "state" => &["state", "policy", "focus_topic", "shared_domain"],
                    "topic" => &["state"],
                    "context" => &["policy", "state", "factor"],
                    _ => &[],
                };
                Ok(render(&self.adoption_view(tab, &params_map(query, &with_config(extra))?)?))
            }
            ["cox", policy] => {
                params_map(query, &[])?;
                Ok(render(&*self.cox(policy)?))
            }
            ["search"] => {
                let params = params_map(query, &["q"])?;
                Ok(render(&self.search(params.get("q").map_or("", String::as_str))?))
            }
            _ => Err(ApiError::not_found("NotFound", format!("no endpoint /api/{path}"))),
        }
    }

    /// Builds the default-configuration snapshots for the overall network and
    /// every topic with data, and fits every policy when covariates exist.
    pub fn precompute_all(&self) -> Result<PrecomputeReport, ApiError> {
        let mut report = PrecomputeReport::default();
        let topics: Vec<Option<Topic>> =
            std::iter::once(None).chain(self.data.table.topics().into_iter().map(Some)).collect();
        for topic in topics {
            for m in Measurement::CENTRALITIES {
                let cfg = ViewConfig { topic, measurement: m.name().to_string(), ..ViewConfig::default() };
                self.snapshot(&cfg)?;
                report.snapshots += 1;
            }
            let cfg = ViewConfig {
                topic,
                method: Method::StaticInnovativeness,
                measurement: Measurement::StaticInnovativeness.name().to_string(),
                ..ViewConfig::default()
            };
            self.snapshot(&cfg)?;
            report.snapshots += 1;
            report.networks += 1;
        }
        if self.data.panel.is_some() {
            let ids: Vec<&String> = self.data.table.policies.keys().collect();
            let results: Vec<Result<Arc<CoxPayload>, ApiError>> = ids.par_iter().map(|id| self.cox(id)).collect();
            for r in results {
                let payload = r?;
                report.cox_fits += 1;
                if !payload.ok {
                    report.cox_failures += 1;
                }
            }
        }
        Ok(report)
    }

    /// Offline bundle for the static demo mode: option lists, networks,
    /// all maps and the matrix and stats of the given configuration.
    pub fn export_bundle(&self, params: &BTreeMap<String, String>) -> Result<Value, ApiError> {
        let cfg = self.config(params)?;
        let snap = self.snapshot(&cfg)?;
        let mut networks = serde_json::Map::new();
        networks.insert(
            "ALL".into(),
            serde_json::to_value(&*self.level_network(None, cfg.year_range, cfg.cutoff)?).expect("serializes"),
        );
        for t in self.data.table.topics() {
            let level = self.level_network(Some(t), cfg.year_range, cfg.cutoff)?;
            networks.insert(t.label().into(), serde_json::to_value(&*level).expect("serializes"));
        }
        let mut maps = serde_json::Map::new();
        let base: BTreeMap<String, String> = params
            .iter()
            .filter(|(k, _)| *k != "method" && *k != "measurement")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for (method, m) in Measurement::CENTRALITIES
            .iter()
            .map(|m| ("NetworkCentrality", m.name()))
            .chain(std::iter::once(("StaticInnovativeness", Measurement::StaticInnovativeness.name())))
        {
            let mut p = base.clone();
            p.insert("method".into(), method.into());
            p.insert("measurement".into(), m.into());
            p.remove("basis");
            p.remove("basis_year");
            maps.insert(m.to_string(), serde_json::to_value(self.map(&p)?).expect("serializes"));
        }
        Ok(json!({
            "data_version": self.data.version,
            "options": self.options(),
            "config": cfg,
            "networks": networks,
            "maps": maps,
            "matrix": self.matrix(params)?,
            "stats": snap.stats,
        }))
    }
}
