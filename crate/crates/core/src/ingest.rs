//! Parsing, validation and imputation of the two input datasets: policy
//! adoption events with their metadata, and the state-year covariate panel.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// The 50 US state codes in alphabetical order. No DC or territories.
pub const STATE_CODES: [&str; 50] = [
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DE", "FL", "GA", "HI", "IA", "ID", "IL", "IN", "KS", "KY", "LA", "MA",
    "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY", "OH", "OK", "OR", "PA",
    "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA", "WI", "WV", "WY",
];

/// A validated US state code. Ordering follows the alphabetical code order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateCode(u8);

impl StateCode {
    pub fn all() -> impl Iterator<Item = StateCode> {
        (0..STATE_CODES.len() as u8).map(StateCode)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(index: usize) -> Option<StateCode> {
        (index < STATE_CODES.len()).then_some(StateCode(index as u8))
    }

    pub fn as_str(self) -> &'static str {
        STATE_CODES[self.0 as usize]
    }
}

impl FromStr for StateCode {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        STATE_CODES
            .binary_search(&upper.as_str())
            .map(|i| StateCode(i as u8))
            .map_err(|_| IngestError::UnknownState(s.trim().to_string()))
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for StateCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for StateCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Policy Agendas Project major topics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Topic {
    Macroeconomics,
    CivilRights,
    Health,
    Agriculture,
    Labor,
    Education,
    Environment,
    Energy,
    Immigration,
    Transportation,
    LawAndCrime,
    SocialWelfare,
    Housing,
    DomesticCommerce,
    Defense,
    Technology,
    ForeignTrade,
    InternationalAffairs,
    GovernmentOperations,
    PublicLands,
}

impl Topic {
    pub const ALL: [Topic; 20] = [
        Topic::Macroeconomics,
        Topic::CivilRights,
        Topic::Health,
        Topic::Agriculture,
        Topic::Labor,
        Topic::Education,
        Topic::Environment,
        Topic::Energy,
        Topic::Immigration,
        Topic::Transportation,
        Topic::LawAndCrime,
        Topic::SocialWelfare,
        Topic::Housing,
        Topic::DomesticCommerce,
        Topic::Defense,
        Topic::Technology,
        Topic::ForeignTrade,
        Topic::InternationalAffairs,
        Topic::GovernmentOperations,
        Topic::PublicLands,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Topic::Macroeconomics => "Macroeconomics",
            Topic::CivilRights => "Civil Rights",
            Topic::Health => "Health",
            Topic::Agriculture => "Agriculture",
            Topic::Labor => "Labor",
            Topic::Education => "Education",
            Topic::Environment => "Environment",
            Topic::Energy => "Energy",
            Topic::Immigration => "Immigration",
            Topic::Transportation => "Transportation",
            Topic::LawAndCrime => "Law and Crime",
            Topic::SocialWelfare => "Social Welfare",
            Topic::Housing => "Housing",
            Topic::DomesticCommerce => "Domestic Commerce",
            Topic::Defense => "Defense",
            Topic::Technology => "Technology",
            Topic::ForeignTrade => "Foreign Trade",
            Topic::InternationalAffairs => "International Affairs",
            Topic::GovernmentOperations => "Government Operations",
            Topic::PublicLands => "Public Lands",
        }
    }

    /// Major topic code in the Policy Agendas codebook.
    pub fn code(self) -> u8 {
        match self {
            Topic::Macroeconomics => 1,
            Topic::CivilRights => 2,
            Topic::Health => 3,
            Topic::Agriculture => 4,
            Topic::Labor => 5,
            Topic::Education => 6,
            Topic::Environment => 7,
            Topic::Energy => 8,
            Topic::Immigration => 9,
            Topic::Transportation => 10,
            Topic::LawAndCrime => 12,
            Topic::SocialWelfare => 13,
            Topic::Housing => 14,
            Topic::DomesticCommerce => 15,
            Topic::Defense => 16,
            Topic::Technology => 17,
            Topic::ForeignTrade => 18,
            Topic::InternationalAffairs => 19,
            Topic::GovernmentOperations => 20,
            Topic::PublicLands => 21,
        }
    }

    /// Topics dropped at load time: no state-level diffusion events exist for them.
    pub fn is_excluded(self) -> bool {
        matches!(self, Topic::ForeignTrade | Topic::Technology)
    }

    /// The 18 topics that survive exclusion, in label order.
    pub fn analyzed() -> Vec<Topic> {
        let mut topics: Vec<Topic> = Topic::ALL.into_iter().filter(|t| !t.is_excluded()).collect();
        topics.sort_by_key(|t| t.label());
        topics
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Topic {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if let Ok(code) = trimmed.parse::<u8>() {
            if let Some(t) = Topic::ALL.into_iter().find(|t| t.code() == code) {
                return Ok(t);
            }
        }
        let norm = normalize_label(trimmed);
        Topic::ALL
            .into_iter()
            .find(|t| normalize_label(t.label()) == norm)
            .ok_or_else(|| IngestError::UnknownTopic(trimmed.to_string()))
    }
}

fn normalize_label(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect::<String>()
        .replace("and", "")
}

impl Serialize for Topic {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Topic {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive calendar-year interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub fn new(start: i32, end: i32) -> Self {
        YearRange { start, end }
    }

    pub fn contains(&self, year: i32) -> bool {
        self.start <= year && year <= self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.end - self.start + 1) as usize
        }
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.start..=self.end
    }

    pub fn within(&self, outer: &YearRange) -> bool {
        outer.start <= self.start && self.end <= outer.end
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("unknown state code {0:?}")]
    UnknownState(String),
    #[error("policy {0:?} has no entry in the policy metadata")]
    UnresolvedPolicy(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("covariate panel is missing factor column {0:?}")]
    MissingFactorColumn(String),
    #[error("non-numeric value {value:?} for {state} {year} {factor}")]
    NonNumericValue { state: String, year: i32, factor: String, value: String },
    #[error("duplicate panel row for {state} {year}")]
    DuplicateStateYear { state: String, year: i32 },
    #[error("series {state}/{factor} has no observations")]
    AllMissingSeries { state: String, factor: String },
    #[error("year range {requested} is not inside {available}")]
    RangeOutOfPanel { requested: YearRange, available: YearRange },
    #[error("empty year range {0}")]
    EmptyRange(YearRange),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdoptionRecord {
    pub state: StateCode,
    pub policy_id: String,
    pub year: i32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub policy_id: String,
    pub display_name: String,
    pub topic: Topic,
    pub first_year: i32,
    pub last_year: i32,
}

/// Load statistics reported alongside a parsed table.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub duplicate_rows_collapsed: usize,
    pub excluded_topic_policies: usize,
    pub excluded_topic_records: usize,
    pub policies_without_records: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdoptionTable {
    /// Sorted by (policy_id, year, state).
    pub records: Vec<AdoptionRecord>,
    pub policies: BTreeMap<String, PolicyMeta>,
    #[serde(default)]
    pub report: LoadReport,
}

impl AdoptionTable {
    /// Builds a table from records and metadata, sorting records and deriving
    /// nothing. Callers are responsible for consistency.
    pub fn from_parts(mut records: Vec<AdoptionRecord>, policies: BTreeMap<String, PolicyMeta>) -> Self {
        sort_records(&mut records);
        AdoptionTable { records, policies, report: LoadReport::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn topics(&self) -> BTreeSet<Topic> {
        self.policies.values().map(|p| p.topic).collect()
    }

    pub fn policy(&self, id: &str) -> Option<&PolicyMeta> {
        self.policies.get(id)
    }

    pub fn records_for<'a>(&'a self, policy_id: &'a str) -> impl Iterator<Item = &'a AdoptionRecord> + 'a {
        let start = self.records.partition_point(|r| r.policy_id.as_str() < policy_id);
        self.records[start..].iter().take_while(move |r| r.policy_id == policy_id)
    }

    /// States adopting in the policy's first year. All are candidate initiators.
    pub fn initiators(&self, policy_id: &str) -> Vec<StateCode> {
        let Some(meta) = self.policies.get(policy_id) else { return Vec::new() };
        self.records_for(policy_id).filter(|r| r.year == meta.first_year).map(|r| r.state).collect()
    }

    pub fn year_span(&self) -> Option<YearRange> {
        let min = self.records.iter().map(|r| r.year).min()?;
        let max = self.records.iter().map(|r| r.year).max()?;
        Some(YearRange::new(min, max))
    }

    /// Events CSV in the canonical column layout.
    pub fn events_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["state", "policy", "adopt_year"]).expect("in-memory write");
        for r in &self.records {
            w.write_record([r.state.as_str(), &r.policy_id, &r.year.to_string()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Metadata CSV in the canonical column layout.
    pub fn meta_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["policy", "policy_name", "topic"]).expect("in-memory write");
        for p in self.policies.values() {
            w.write_record([p.policy_id.as_str(), &p.display_name, p.topic.label()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

fn sort_records(records: &mut [AdoptionRecord]) {
    records.sort_by(|a, b| (&a.policy_id, a.year, a.state).cmp(&(&b.policy_id, b.year, b.state)));
}

const EVENT_ALIASES: &[(&str, &[&str])] = &[
    ("state", &["state", "st", "state_abbrev", "abbrev"]),
    ("policy", &["policy", "policy_id", "policy_lab", "policyid"]),
    ("adopt_year", &["adopt_year", "adoption_year", "year", "adopted"]),
];

const META_ALIASES: &[(&str, &[&str])] = &[
    ("policy", &["policy", "policy_id", "policy_lab", "policyid"]),
    ("policy_name", &["policy_name", "name", "description", "policy_description", "title"]),
    ("topic", &["topic", "majortopic", "major_topic", "topic_name"]),
];

fn resolve_columns(headers: &csv::StringRecord, aliases: &[(&str, &[&str])]) -> Result<Vec<usize>, IngestError> {
    let lowered: Vec<String> =
        headers.iter().map(|h| h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase()).collect();
    aliases
        .iter()
        .map(|(canonical, names)| {
            names
                .iter()
                .find_map(|n| lowered.iter().position(|h| h == n))
                .ok_or_else(|| IngestError::MalformedRow { line: 1, reason: format!("missing column {canonical:?}") })
        })
        .collect()
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(bytes)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IngestError::MalformedRow { line, reason: e.to_string() }
}

/// Parses the events and metadata CSVs into a normalized table.
///
/// Policies in the excluded topics are dropped with their records; duplicate
/// (state, policy) events collapse to the earliest year.
pub fn parse_adoption_data(events_bytes: &[u8], meta_bytes: &[u8]) -> Result<AdoptionTable, IngestError> {
    let mut report = LoadReport::default();

    let mut meta_reader = csv_reader(meta_bytes);
    let meta_cols = resolve_columns(&meta_reader.headers().map_err(csv_error)?.clone(), META_ALIASES)?;
    let mut meta: HashMap<String, (String, Topic)> = HashMap::new();
    for row in meta_reader.records() {
        let row = row.map_err(csv_error)?;
        let line = line_of(&row);
        let field = |i: usize| row.get(meta_cols[i]).map(str::trim);
        let (Some(id), Some(name), Some(topic)) = (field(0), field(1), field(2)) else {
            return Err(IngestError::MalformedRow { line, reason: "too few fields".into() });
        };
        if id.is_empty() {
            return Err(IngestError::MalformedRow { line, reason: "empty policy id".into() });
        }
        let topic: Topic = topic
            .parse()
            .map_err(|_| IngestError::MalformedRow { line, reason: format!("unknown topic {topic:?}") })?;
        meta.insert(id.to_string(), (name.to_string(), topic));
    }
    if meta.is_empty() {
        return Err(IngestError::EmptyInput("policy metadata"));
    }

    let mut events_reader = csv_reader(events_bytes);
    let ev_cols = resolve_columns(&events_reader.headers().map_err(csv_error)?.clone(), EVENT_ALIASES)?;
    let mut earliest: HashMap<(String, StateCode), i32> = HashMap::new();
    let mut excluded_ids: BTreeSet<String> = BTreeSet::new();
    let mut rows = 0usize;
    for row in events_reader.records() {
        let row = row.map_err(csv_error)?;
        let line = line_of(&row);
        let field = |i: usize| row.get(ev_cols[i]).map(str::trim);
        let (Some(state), Some(policy), Some(year)) = (field(0), field(1), field(2)) else {
            return Err(IngestError::MalformedRow { line, reason: "too few fields".into() });
        };
        rows += 1;
        let state: StateCode = state.parse()?;
        let year = parse_year(year)
            .ok_or_else(|| IngestError::MalformedRow { line, reason: format!("invalid year {year:?}") })?;
        let Some((_, topic)) = meta.get(policy) else {
            return Err(IngestError::UnresolvedPolicy(policy.to_string()));
        };
        if topic.is_excluded() {
            report.excluded_topic_records += 1;
            excluded_ids.insert(policy.to_string());
            continue;
        }
        match earliest.entry((policy.to_string(), state)) {
            std::collections::hash_map::Entry::Occupied(mut e) => {
                report.duplicate_rows_collapsed += 1;
                if year < *e.get() {
                    e.insert(year);
                }
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(year);
            }
        }
    }
    if rows == 0 {
        return Err(IngestError::EmptyInput("adoption events"));
    }
    report.excluded_topic_policies = excluded_ids.len();

    let mut records: Vec<AdoptionRecord> =
        earliest.into_iter().map(|((policy_id, state), year)| AdoptionRecord { state, policy_id, year }).collect();
    sort_records(&mut records);

    let mut policies = BTreeMap::new();
    for r in &records {
        let (name, topic) = &meta[&r.policy_id];
        let entry = policies.entry(r.policy_id.clone()).or_insert_with(|| PolicyMeta {
            policy_id: r.policy_id.clone(),
            display_name: name.clone(),
            topic: *topic,
            first_year: r.year,
            last_year: r.year,
        });
        entry.first_year = entry.first_year.min(r.year);
        entry.last_year = entry.last_year.max(r.year);
    }
    report.policies_without_records =
        meta.iter().filter(|(id, (_, t))| !t.is_excluded() && !policies.contains_key(*id)).count();

    Ok(AdoptionTable { records, policies, report })
}

fn parse_year(s: &str) -> Option<i32> {
    s.parse::<i32>().ok().or_else(|| {
        let f: f64 = s.parse().ok()?;
        (f.fract() == 0.0 && f.abs() < 1e6).then_some(f as i32)
    })
}

/// Keeps records inside `range` and, if given, only policies of `topic`.
/// Policy metadata keeps the unfiltered first/last years so creation status
/// does not change under filtering. Policies left without records are dropped.
pub fn filter_adoptions(
    table: &AdoptionTable,
    topic: Option<Topic>,
    range: YearRange,
) -> Result<AdoptionTable, IngestError> {
    if range.is_empty() {
        return Err(IngestError::EmptyRange(range));
    }
    if let Some(t) = topic {
        if t.is_excluded() {
            return Err(IngestError::UnknownTopic(t.label().to_string()));
        }
    }
    let records: Vec<AdoptionRecord> = table
        .records
        .iter()
        .filter(|r| range.contains(r.year))
        .filter(|r| topic.is_none_or(|t| table.policies[&r.policy_id].topic == t))
        .cloned()
        .collect();
    let kept: BTreeSet<&str> = records.iter().map(|r| r.policy_id.as_str()).collect();
    let policies = table
        .policies
        .iter()
        .filter(|(id, _)| kept.contains(id.as_str()))
        .map(|(id, m)| (id.clone(), m.clone()))
        .collect();
    Ok(AdoptionTable { records, policies, report: table.report.clone() })
}

/// The default 14 contextual factors.
pub const DEFAULT_FACTORS: [&str; 14] = [
    "Dynamic State Innovativeness",
    "Foreign Born",
    "African American",
    "Crime Rate",
    "Senate Democrats",
    "House Democrats",
    "Population",
    "Income Per Capita",
    "Unemployment Rate",
    "Urban Population",
    "Citizen Ideology",
    "Government Ideology",
    "Democratic Governor",
    "Legislative Professionalism",
];

/// Factors sampled only in census (decade) years.
pub const DEFAULT_DECADE_FACTORS: [&str; 2] = ["Foreign Born", "African American"];

/// A (state, factor) pair whose values are structurally not applicable and
/// are filled with a constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InapplicableRule {
    pub state: StateCode,
    pub factor: String,
    pub fill: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationRules {
    pub decade_factors: Vec<String>,
    pub inapplicable: Vec<InapplicableRule>,
}

impl Default for ImputationRules {
    fn default() -> Self {
        let ne: StateCode = "NE".parse().expect("valid code");
        ImputationRules {
            decade_factors: DEFAULT_DECADE_FACTORS.iter().map(|s| s.to_string()).collect(),
            inapplicable: ["Senate Democrats", "House Democrats"]
                .iter()
                .map(|f| InapplicableRule { state: ne, factor: f.to_string(), fill: 0.0 })
                .collect(),
        }
    }
}

/// State x year x factor grid. Missing cells hold NaN and a false mask bit.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariatePanel {
    pub states: Vec<StateCode>,
    pub years: YearRange,
    pub factors: Vec<String>,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl CovariatePanel {
    pub fn new(states: Vec<StateCode>, years: YearRange, factors: Vec<String>) -> Self {
        let n = states.len() * years.len() * factors.len();
        CovariatePanel { states, years, factors, values: vec![f64::NAN; n], observed: vec![false; n] }
    }

    fn offset(&self, s: usize, y: usize, f: usize) -> usize {
        (s * self.years.len() + y) * self.factors.len() + f
    }

    pub fn state_index(&self, state: StateCode) -> Option<usize> {
        self.states.iter().position(|&s| s == state)
    }

    pub fn factor_index(&self, factor: &str) -> Option<usize> {
        self.factors.iter().position(|f| f == factor)
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.contains(year).then(|| (year - self.years.start) as usize)
    }

    /// Value at (state, year, factor) by index; NaN when missing.
    pub fn value_at(&self, s: usize, y: usize, f: usize) -> f64 {
        self.values[self.offset(s, y, f)]
    }

    pub fn observed_at(&self, s: usize, y: usize, f: usize) -> bool {
        self.observed[self.offset(s, y, f)]
    }

    pub fn get(&self, state: StateCode, year: i32, factor: &str) -> Option<f64> {
        let v = self.value_at(self.state_index(state)?, self.year_index(year)?, self.factor_index(factor)?);
        (!v.is_nan()).then_some(v)
    }

    pub fn is_observed(&self, state: StateCode, year: i32, factor: &str) -> Option<bool> {
        Some(self.observed_at(self.state_index(state)?, self.year_index(year)?, self.factor_index(factor)?))
    }

    /// Sets an observed value.
    pub fn set_observed(&mut self, s: usize, y: usize, f: usize, value: f64) {
        let o = self.offset(s, y, f);
        self.values[o] = value;
        self.observed[o] = !value.is_nan();
    }

    /// Sets a cell with an explicit observation flag.
    pub fn set_cell(&mut self, s: usize, y: usize, f: usize, value: f64, observed: bool) {
        let o = self.offset(s, y, f);
        self.values[o] = value;
        self.observed[o] = observed;
    }

    /// All factor values for one state-year, in factor order.
    pub fn row(&self, state: StateCode, year: i32) -> Option<&[f64]> {
        let s = self.state_index(state)?;
        let y = self.year_index(year)?;
        let o = self.offset(s, y, 0);
        Some(&self.values[o..o + self.factors.len()])
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }
}

/// Parses the covariate panel CSV, selecting `factor_names`. No imputation.
pub fn parse_covariate_panel(panel_bytes: &[u8], factor_names: &[String]) -> Result<CovariatePanel, IngestError> {
    if factor_names.is_empty() {
        return Err(IngestError::MissingFactorColumn("<none requested>".into()));
    }
    let mut reader = csv_reader(panel_bytes);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let norm = |s: &str| s.trim().trim_start_matches('\u{feff}').to_ascii_lowercase();
    let find = |name: &str| headers.iter().position(|h| norm(h) == norm(name));
    let state_col = find("state")
        .or_else(|| find("st"))
        .ok_or_else(|| IngestError::MalformedRow { line: 1, reason: "missing column \"state\"".into() })?;
    let year_col =
        find("year").ok_or_else(|| IngestError::MalformedRow { line: 1, reason: "missing column \"year\"".into() })?;
    let factor_cols = factor_names
        .iter()
        .map(|f| find(f).ok_or_else(|| IngestError::MissingFactorColumn(f.clone())))
        .collect::<Result<Vec<_>, _>>()?;

    struct Row {
        state: StateCode,
        year: i32,
        values: Vec<f64>,
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec);
        let state: StateCode = rec.get(state_col).unwrap_or("").parse()?;
        let year_raw = rec.get(year_col).unwrap_or("").trim();
        let year = parse_year(year_raw)
            .ok_or_else(|| IngestError::MalformedRow { line, reason: format!("invalid year {year_raw:?}") })?;
        let values = factor_cols
            .iter()
            .zip(factor_names)
            .map(|(&c, name)| {
                let raw = rec.get(c).unwrap_or("").trim();
                if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") || raw == "." {
                    return Ok(f64::NAN);
                }
                raw.parse::<f64>().map_err(|_| IngestError::NonNumericValue {
                    state: state.to_string(),
                    year,
                    factor: name.clone(),
                    value: raw.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(Row { state, year, values });
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyInput("covariate panel"));
    }

    let states: Vec<StateCode> = rows.iter().map(|r| r.state).collect::<BTreeSet<_>>().into_iter().collect();
    let years =
        YearRange::new(rows.iter().map(|r| r.year).min().unwrap_or(0), rows.iter().map(|r| r.year).max().unwrap_or(0));
    let mut panel = CovariatePanel::new(states, years, factor_names.to_vec());
    let mut seen = BTreeSet::new();
    for row in rows {
        if !seen.insert((row.state, row.year)) {
            return Err(IngestError::DuplicateStateYear { state: row.state.to_string(), year: row.year });
        }
        let s = panel.state_index(row.state).expect("state collected above");
        let y = panel.year_index(row.year).expect("year inside span");
        for (f, v) in row.values.into_iter().enumerate() {
            panel.set_observed(s, y, f, v);
        }
    }
    Ok(panel)
}

/// Fills every missing cell of `panel` restricted to `range`.
///
/// Rule order: decade factors carry their last decade-year observation
/// forward; structurally inapplicable series get their configured constant;
/// remaining gaps take the last observation; leading gaps take the first
/// observation. Observed cells are never changed.
pub fn impute_covariates(
    panel: &CovariatePanel,
    range: YearRange,
    rules: &ImputationRules,
) -> Result<CovariatePanel, IngestError> {
    if range.is_empty() {
        return Err(IngestError::EmptyRange(range));
    }
    if !range.within(&panel.years) {
        return Err(IngestError::RangeOutOfPanel { requested: range, available: panel.years });
    }
    let mut out = CovariatePanel::new(panel.states.clone(), range, panel.factors.clone());
    let offset = (range.start - panel.years.start) as usize;
    let n_years = panel.years.len();

    for (s, &state) in panel.states.iter().enumerate() {
        for (f, factor) in panel.factors.iter().enumerate() {
            // Full-panel series so that observations before the range still carry forward.
            let series: Vec<f64> = (0..n_years).map(|y| panel.value_at(s, y, f)).collect();
            let observed: Vec<bool> = (0..n_years).map(|y| panel.observed_at(s, y, f)).collect();
            let mut filled = series.clone();

            if rules.decade_factors.iter().any(|d| d == factor) {
                let mut carry = None;
                for (y, v) in filled.iter_mut().enumerate() {
                    let year = panel.years.start + y as i32;
                    if !v.is_nan() {
                        if year % 10 == 0 {
                            carry = Some(*v);
                        }
                    } else if let Some(c) = carry {
                        *v = c;
                    }
                }
            }

            if let Some(rule) = rules.inapplicable.iter().find(|r| r.state == state && &r.factor == factor) {
                for v in filled.iter_mut().filter(|v| v.is_nan()) {
                    *v = rule.fill;
                }
            }

            let mut last = None;
            for v in filled.iter_mut() {
                if v.is_nan() {
                    if let Some(l) = last {
                        *v = l;
                    }
                } else {
                    last = Some(*v);
                }
            }

            let Some(first) = filled.iter().copied().find(|v| !v.is_nan()) else {
                return Err(IngestError::AllMissingSeries { state: state.to_string(), factor: factor.clone() });
            };
            for v in filled.iter_mut().take_while(|v| v.is_nan()) {
                *v = first;
            }

            for y in 0..range.len() {
                let src = y + offset;
                let o = out.offset(s, y, f);
                out.values[o] = if observed[src] { series[src] } else { filled[src] };
                out.observed[o] = observed[src];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HATE_META: &str =
        "policy,policy_name,topic\np1,Laws establishing Hate Crimes against Minorities,Law and Crime\n";

    #[test]
    fn single_record_table() {
        let t = parse_adoption_data(b"state,policy,adopt_year\nCA,p1,1978\n", HATE_META.as_bytes()).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.policies.len(), 1);
        let p = &t.policies["p1"];
        assert_eq!((p.first_year, p.last_year), (1978, 1978));
        assert_eq!(p.topic, Topic::LawAndCrime);
    }

    #[test]
    fn unknown_state_is_named() {
        let err = parse_adoption_data(b"state,policy,adopt_year\nZZ,p1,1978\n", HATE_META.as_bytes()).unwrap_err();
        assert_eq!(err, IngestError::UnknownState("ZZ".into()));
        assert!(err.to_string().contains("ZZ"));
    }

    #[test]
    fn unresolved_policy_and_empty_input() {
        let err = parse_adoption_data(b"state,policy,adopt_year\nCA,p9,1978\n", HATE_META.as_bytes()).unwrap_err();
        assert_eq!(err, IngestError::UnresolvedPolicy("p9".into()));
        let err = parse_adoption_data(b"state,policy,adopt_year\n", HATE_META.as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::EmptyInput(_)));
    }

    #[test]
    fn malformed_year_reports_line() {
        let err = parse_adoption_data(b"state,policy,adopt_year\nCA,p1,1978\nWA,p1,soon\n", HATE_META.as_bytes())
            .unwrap_err();
        match err {
            IngestError::MalformedRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicates_collapse_to_earliest_and_excluded_topics_drop() {
        let meta = "policy,policy_name,topic\np1,A,Health\np2,B,Technology\np3,C,18\n";
        let events = "state,policy,adopt_year\nCA,p1,1990\nCA,p1,1985\nWA,p1,1991\nCA,p2,1990\nNY,p3,2000\n";
        let t = parse_adoption_data(events.as_bytes(), meta.as_bytes()).unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.report.duplicate_rows_collapsed, 1);
        assert_eq!(t.report.excluded_topic_policies, 2);
        assert_eq!(t.report.excluded_topic_records, 2);
        assert_eq!(t.policies["p1"].first_year, 1985);
        assert!(!t.policies.contains_key("p2"));
    }

    #[test]
    fn header_aliases_and_numeric_topics() {
        let meta = "policy_lab,description,majortopic\nx,Some law,12\n";
        let events = "st,policy_lab,year\nca,x,2001\n";
        let t = parse_adoption_data(events.as_bytes(), meta.as_bytes()).unwrap();
        assert_eq!(t.policies["x"].topic, Topic::LawAndCrime);
        assert_eq!(t.records[0].state.as_str(), "CA");
    }

    #[test]
    fn topic_labels_round_trip() {
        for t in Topic::ALL {
            assert_eq!(t.label().parse::<Topic>().unwrap(), t);
            assert_eq!(t.code().to_string().parse::<Topic>().unwrap(), t);
        }
        assert_eq!("law & crime".parse::<Topic>().unwrap(), Topic::LawAndCrime);
        assert_eq!(Topic::analyzed().len(), 18);
    }

    #[test]
    fn filter_out_of_range_and_identity() {
        let meta = "policy,policy_name,topic\np1,A,Health\np2,B,Law and Crime\n";
        let events = "state,policy,adopt_year\nCA,p1,1990\nWA,p1,1991\nNY,p2,1960\n";
        let t = parse_adoption_data(events.as_bytes(), meta.as_bytes()).unwrap();
        let empty = filter_adoptions(&t, None, YearRange::new(3000, 3001)).unwrap();
        assert!(empty.records.is_empty() && empty.policies.is_empty());
        let same = filter_adoptions(&t, None, YearRange::new(1691, 2017)).unwrap();
        assert_eq!(same.records, t.records);
        let lc = filter_adoptions(&t, Some(Topic::LawAndCrime), YearRange::new(1950, 2017)).unwrap();
        assert_eq!(lc.policies.len(), 1);
        let late = filter_adoptions(&t, None, YearRange::new(1991, 2017)).unwrap();
        assert_eq!(late.policies["p1"].first_year, 1990);
        assert_eq!(
            filter_adoptions(&t, Some(Topic::Technology), YearRange::new(1950, 2017)).unwrap_err(),
            IngestError::UnknownTopic("Technology".into())
        );
    }

    fn factors(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn panel_mask_reflects_decade_observations() {
        let csv = "state,year,Foreign Born\nCA,1970,8.8\nCA,1971,\nCA,1975,NA\nCA,1980,15.1\n";
        let p = parse_covariate_panel(csv.as_bytes(), &factors(&["Foreign Born"])).unwrap();
        let ca: StateCode = "CA".parse().unwrap();
        for y in 1970..=1980 {
            let want = y == 1970 || y == 1980;
            assert_eq!(p.is_observed(ca, y, "Foreign Born"), Some(want), "year {y}");
        }
    }

    #[test]
    fn panel_errors() {
        assert!(matches!(
            parse_covariate_panel(b"state,year,a\nCA,2000,1\n", &[]),
            Err(IngestError::MissingFactorColumn(_))
        ));
        assert!(matches!(
            parse_covariate_panel(b"state,year,a\nCA,2000,1\n", &factors(&["b"])),
            Err(IngestError::MissingFactorColumn(f)) if f == "b"
        ));
        assert!(matches!(
            parse_covariate_panel(b"state,year,a\nCA,2000,x\n", &factors(&["a"])),
            Err(IngestError::NonNumericValue { year: 2000, .. })
        ));
        assert!(matches!(
            parse_covariate_panel(b"state,year,a\nCA,2000,1\nCA,2000,2\n", &factors(&["a"])),
            Err(IngestError::DuplicateStateYear { year: 2000, .. })
        ));
    }

    #[test]
    fn identity_ingestion() {
        let p = parse_covariate_panel(b"state,year,a\nCA,2000,1\nCA,2001,2\nCA,2002,3\n", &factors(&["a"])).unwrap();
        assert_eq!((p.states.len(), p.years.len(), p.factors.len()), (1, 3, 1));
        assert_eq!(p.observed_count(), 3);
    }

    #[test]
    fn locf_then_backfill() {
        let p = parse_covariate_panel(b"state,year,a\nCA,1999,\nCA,2000,5\nCA,2003,8\nCA,2004,\n", &factors(&["a"]))
            .unwrap();
        let out = impute_covariates(&p, YearRange::new(1999, 2004), &ImputationRules::default()).unwrap();
        let ca: StateCode = "CA".parse().unwrap();
        let got: Vec<f64> = (1999..=2004).map(|y| out.get(ca, y, "a").unwrap()).collect();
        assert_eq!(got, vec![5.0, 5.0, 5.0, 5.0, 8.0, 8.0]);
        assert_eq!(out.is_observed(ca, 1999, "a"), Some(false));
        assert_eq!(out.is_observed(ca, 2000, "a"), Some(true));
    }

    #[test]
    fn all_missing_series_errors() {
        let p = parse_covariate_panel(b"state,year,a\nCA,2000,\nCA,2001,\n", &factors(&["a"])).unwrap();
        assert!(matches!(
            impute_covariates(&p, YearRange::new(2000, 2001), &ImputationRules::default()),
            Err(IngestError::AllMissingSeries { .. })
        ));
        let p = parse_covariate_panel(b"state,year,a\nCA,2000,1\n", &factors(&["a"])).unwrap();
        assert!(matches!(
            impute_covariates(&p, YearRange::new(1999, 2000), &ImputationRules::default()),
            Err(IngestError::RangeOutOfPanel { .. })
        ));
    }
}
