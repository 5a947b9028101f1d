//! View configuration: what the coordinated views are currently showing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use diffusion_core::ingest::{StateCode, Topic, YearRange};
use diffusion_core::metrics::{Basis, Measurement};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ApiError;

pub const DEFAULT_YEARS: YearRange = YearRange { start: 1950, end: 2017 };
pub const DEFAULT_CUTOFF: f64 = 0.05;

/// Query keys that make up a [`ViewConfig`].
pub const CONFIG_KEYS: [&str; 10] =
    ["topic", "from", "to", "method", "measurement", "basis", "basis_year", "state_sort", "policy_sort", "cutoff"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    NetworkCentrality,
    StaticInnovativeness,
    ContextualFactor,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::NetworkCentrality, Method::StaticInnovativeness, Method::ContextualFactor];

    pub fn name(self) -> &'static str {
        match self {
            Method::NetworkCentrality => "NetworkCentrality",
            Method::StaticInnovativeness => "StaticInnovativeness",
            Method::ContextualFactor => "ContextualFactor",
        }
    }
}

impl FromStr for Method {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "networkcentrality" | "centrality" | "network" => Ok(Method::NetworkCentrality),
            "staticinnovativeness" | "innovativeness" | "staticstateinnovativeness" => Ok(Method::StaticInnovativeness),
            "contextualfactor" | "contextual" | "context" | "factor" => Ok(Method::ContextualFactor),
            _ => Err(ApiError::bad_request("InvalidParameter", format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum StateSort {
    #[default]
    Alphabetical,
    MeasurementDesc,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum PolicySort {
    #[default]
    Alphabetical,
    TotalAdoptionsDesc,
    PolicyActivity(StateCode),
}

impl fmt::Display for StateSort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateSort::Alphabetical => "alphabetical",
            StateSort::MeasurementDesc => "measurement-desc",
        })
    }
}

impl FromStr for StateSort {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "alphabetical" => Ok(StateSort::Alphabetical),
            "measurementdesc" | "measurement" => Ok(StateSort::MeasurementDesc),
            _ => Err(ApiError::bad_request("InvalidParameter", format!("unknown state sort {s:?}"))),
        }
    }
}

impl fmt::Display for PolicySort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySort::Alphabetical => f.write_str("alphabetical"),
            PolicySort::TotalAdoptionsDesc => f.write_str("total-adoptions-desc"),
            PolicySort::PolicyActivity(s) => write!(f, "policy-activity({s})"),
        }
    }
}

impl FromStr for PolicySort {
    type Err = ApiError;

    /// Accepts `policy-activity(CA)` and `policy-activity:CA`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ApiError::bad_request("InvalidParameter", format!("unknown policy sort {s:?}"));
        if let Some(rest) = s.trim().strip_prefix("policy-activity") {
            let code = rest.trim_start_matches([':', '(']).trim_end_matches(')').trim();
            let state = code
                .parse::<StateCode>()
                .map_err(|_| ApiError::bad_request("UnknownState", format!("unknown state {code:?}")))?;
            return Ok(PolicySort::PolicyActivity(state));
        }
        match normalize(s).as_str() {
            "alphabetical" => Ok(PolicySort::Alphabetical),
            "totaladoptionsdesc" | "totaladoptions" => Ok(PolicySort::TotalAdoptionsDesc),
            _ => Err(bad()),
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(StateSort);
string_serde!(PolicySort);

/// `None` is the ALL topic.
mod topic_choice {
    use super::*;

    pub fn serialize<S: Serializer>(topic: &Option<Topic>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(topic.map_or("ALL", |t| t.label()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Topic>, D::Error> {
        let s = String::deserialize(d)?;
        parse_topic_choice(&s).map_err(serde::de::Error::custom)
    }
}

pub fn parse_topic_choice(s: &str) -> Result<Option<Topic>, ApiError> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    match s.parse::<Topic>() {
        Ok(t) if !t.is_excluded() => Ok(Some(t)),
        _ => Err(ApiError::bad_request("UnknownTopic", format!("unknown topic {s:?}"))),
    }
}

pub fn parse_state(s: &str) -> Result<StateCode, ApiError> {
    s.parse().map_err(|_| ApiError::bad_request("UnknownState", format!("unknown state {s:?}")))
}

fn normalize(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    #[serde(with = "topic_choice")]
    pub topic: Option<Topic>,
    pub year_range: YearRange,
    pub method: Method,
    pub measurement: String,
    /// Only meaningful for [`Method::ContextualFactor`].
    pub basis: Option<Basis>,
    pub state_sort: StateSort,
    pub policy_sort: PolicySort,
    /// Stopping threshold of the network inference.
    pub cutoff: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            topic: None,
            year_range: DEFAULT_YEARS,
            method: Method::NetworkCentrality,
            measurement: Measurement::Degree.name().to_string(),
            basis: None,
            state_sort: StateSort::Alphabetical,
            policy_sort: PolicySort::Alphabetical,
            cutoff: DEFAULT_CUTOFF,
        }
    }
}

/// The fields that change computed results; sort orders are presentation only.
#[derive(Serialize)]
pub struct ComputeKey<'a> {
    #[serde(with = "topic_choice")]
    pub topic: Option<Topic>,
    pub year_range: YearRange,
    pub method: Method,
    pub measurement: &'a str,
    pub basis: Option<Basis>,
    pub cutoff: f64,
}

impl ViewConfig {
    /// Parses query parameters. `factors` are the panel's factor names, used to
    /// validate contextual measurements.
    pub fn from_params(params: &BTreeMap<String, String>, factors: &[String]) -> Result<ViewConfig, ApiError> {
        let mut cfg = ViewConfig::default();
        if let Some(t) = params.get("topic") {
            cfg.topic = parse_topic_choice(t)?;
        }
        let year = |key: &str, default: i32| -> Result<i32, ApiError> {
            params.get(key).map_or(Ok(default), |v| {
                v.trim()
                    .parse()
                    .map_err(|_| ApiError::bad_request("InvalidParameter", format!("{key} must be a year, got {v:?}")))
            })
        };
        cfg.year_range = YearRange::new(year("from", DEFAULT_YEARS.start)?, year("to", DEFAULT_YEARS.end)?);
        if cfg.year_range.is_empty() {
            return Err(ApiError::bad_request("EmptyRange", format!("empty year range {}", cfg.year_range)));
        }
        if let Some(m) = params.get("method") {
            cfg.method = m.parse()?;
        }
        cfg.measurement = match (cfg.method, params.get("measurement")) {
            (Method::ContextualFactor, m) => {
                let name = m.map(String::as_str).or(factors.first().map(String::as_str)).ok_or_else(|| {
                    ApiError::bad_request("NoCovariates", "contextual factors need a covariate panel")
                })?;
                factors
                    .iter()
                    .find(|f| f.eq_ignore_ascii_case(name.trim()))
                    .cloned()
                    .ok_or_else(|| ApiError::bad_request("UnknownFactor", format!("unknown factor {name:?}")))?
            }
            (method, m) => {
                let parsed = match m {
                    None if method == Method::NetworkCentrality => Measurement::Degree,
                    None => Measurement::StaticInnovativeness,
                    Some(m) => m.parse::<Measurement>().map_err(|_| {
                        ApiError::bad_request("UnknownMeasurement", format!("unknown measurement {m:?}"))
                    })?,
                };
                let valid = match method {
                    Method::NetworkCentrality => parsed.is_centrality(),
                    _ => parsed == Measurement::StaticInnovativeness,
                };
                if !valid {
                    return Err(ApiError::bad_request(
                        "UnknownMeasurement",
                        format!("{parsed} is not a {} measurement", method.name()),
                    ));
                }
                parsed.name().to_string()
            }
        };
        if cfg.method == Method::ContextualFactor {
            let kind = params.get("basis").map(|b| normalize(b)).unwrap_or_else(|| "yearsrange".into());
            cfg.basis = Some(match kind.as_str() {
                "allrange" | "all" => Basis::AllRange,
                "yearsrange" | "years" => Basis::YearsRange { start: cfg.year_range.start, end: cfg.year_range.end },
                "oneyear" | "year" => {
                    let y = params
                        .get("basis_year")
                        .ok_or_else(|| ApiError::bad_request("InvalidParameter", "one-year basis needs basis_year"))?;
                    let year = y.trim().parse().map_err(|_| {
                        ApiError::bad_request("InvalidParameter", format!("basis_year must be a year, got {y:?}"))
                    })?;
                    Basis::OneYear { year }
                }
                _ => {
                    return Err(ApiError::bad_request(
                        "InvalidParameter",
                        format!("unknown basis {:?}", params["basis"]),
                    ))
                }
            });
        }
        if let Some(s) = params.get("state_sort") {
            cfg.state_sort = s.parse()?;
        }
        if let Some(s) = params.get("policy_sort") {
            cfg.policy_sort = s.parse()?;
        }
        if let Some(c) = params.get("cutoff") {
            cfg.cutoff = c.trim().parse().ok().filter(|c: &f64| *c > 0.0 && *c < 1.0).ok_or_else(|| {
                ApiError::bad_request("InvalidParameter", format!("cutoff must be in (0, 1), got {c:?}"))
            })?;
        }
        Ok(cfg)
    }

    pub fn compute_key(&self) -> ComputeKey<'_> {
        ComputeKey {
            topic: self.topic,
            year_range: self.year_range,
            method: self.method,
            measurement: &self.measurement,
            basis: self.basis,
            cutoff: self.cutoff,
        }
    }
}
