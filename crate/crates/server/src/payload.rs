//! Response bodies of the view endpoints.

use std::collections::BTreeMap;

use diffusion_core::ingest::YearRange;
use diffusion_core::metrics::MetricScope;
use diffusion_core::survival::{FitStatus, HazardReportEntry};
use serde::{Deserialize, Serialize};

use crate::config::ViewConfig;
use crate::error::ApiError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Incoming,
    Outgoing,
    Bidirectional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRef {
    pub source: String,
    pub target: String,
    /// Marginal gain and insertion order for network edges; absent for
    /// per-policy source ties.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
}

/// All edges between one focus state and one partner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternEntry {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<String>,
    pub state: String,
    pub partner: String,
    pub relation: Relation,
    pub edges: Vec<EdgeRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Focus {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternsPayload {
    pub config: ViewConfig,
    pub focus: Focus,
    /// Which network the upper patterns come from: "overall" or a topic label.
    pub upper_level: String,
    /// "topic-network", "source-ties" or "none".
    pub lower_kind: String,
    pub upper: Vec<PatternEntry>,
    pub lower: Vec<PatternEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub state: String,
    pub creations: u32,
    pub adoptions: u32,
    /// Row-relative quartile of `creations + adoptions`; absent for empty cells.
    pub bin: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initiator: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adopter: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    /// Topic label or policy id.
    pub key: String,
    pub label: String,
    pub kind: String,
    pub total: u32,
    pub cells: Vec<MatrixCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixPayload {
    pub config: ViewConfig,
    pub states: Vec<String>,
    pub rows: Vec<MatrixRow>,
    pub column_totals: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapPayload {
    pub config: ViewConfig,
    pub measurement: String,
    pub scope: MetricScope,
    pub values: BTreeMap<String, f64>,
    pub bins: BTreeMap<String, u8>,
    /// States in the configured state sort.
    pub order: Vec<String>,
    /// Cross-state mean of a contextual factor under a one-year basis.
    pub us_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorBar {
    pub key: String,
    pub creations: u32,
    pub adoptions: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub creations: u32,
    pub adoptions: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorPayload {
    pub config: ViewConfig,
    pub tab: String,
    pub focus: Focus,
    pub shared_domain: bool,
    /// Upper bounds of the two y-domains; equal when shared.
    pub y_max: Domain,
    pub series: Vec<MirrorBar>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicBar {
    pub topic: String,
    /// Unique policies with adoptions in scope.
    pub policies: u32,
    /// With a state focus: policies the state adopted in their first year.
    pub introduced: Option<u32>,
    /// With a state focus: policies the state took up from others.
    pub adopted: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicPayload {
    pub config: ViewConfig,
    pub tab: String,
    pub focus: Focus,
    pub bars: Vec<TopicBar>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearValue {
    pub year: i32,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdoptionBox {
    pub state: String,
    pub year: i32,
    pub value: f64,
    /// Adopted in the policy's first year (drawn highlighted).
    pub first_year: bool,
    /// Position from the bottom among boxes of the same year, ascending by value.
    pub stack: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextPayload {
    pub config: ViewConfig,
    pub tab: String,
    pub policy_id: String,
    pub policy_name: String,
    pub state: String,
    pub factor: String,
    pub years: YearRange,
    pub series: Vec<YearValue>,
    pub us_mean: Vec<YearValue>,
    pub boxes: Vec<AdoptionBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxPayload {
    pub policy_id: String,
    pub policy_name: String,
    pub topic: String,
    pub ok: bool,
    pub converged: bool,
    pub status: Option<FitStatus>,
    pub iterations: Option<usize>,
    pub n_rows: Option<usize>,
    pub n_events: Option<usize>,
    pub factors: Vec<HazardReportEntry>,
    /// Present when the fit could not be produced.
    pub error: Option<ApiError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHit {
    pub policy_id: String,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGroup {
    pub topic: String,
    /// The topic label itself contains the keyword.
    pub topic_match: bool,
    pub policies: Vec<PolicyHit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchPayload {
    pub query: String,
    pub groups: Vec<SearchGroup>,
}
