//! Random view-configuration requests against the JSON API.

use rand::seq::IndexedRandom;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct ApiRequest {
    /// Path below `/api/`.
    pub path: String,
    pub query: Vec<(String, String)>,
}

impl ApiRequest {
    /// Percent-encoded URI for HTTP clients.
    pub fn uri(&self) -> String {
        let enc = |s: &str| -> String {
            s.bytes()
                .map(|b| match b {
                    b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
                    _ => format!("%{b:02X}"),
                })
                .collect()
        };
        let q: Vec<String> = self.query.iter().map(|(k, v)| format!("{}={}", enc(k), enc(v))).collect();
        if q.is_empty() {
            format!("/api/{}", self.path)
        } else {
            format!("/api/{}?{}", self.path, q.join("&"))
        }
    }
}

const CENTRALITIES: [&str; 5] = ["Degree", "In-Degree", "Out-Degree", "Closeness", "PageRank"];
const STATES: [&str; 10] = ["CA", "NY", "TX", "FL", "WA", "OR", "MT", "GA", "IL", "WY"];

/// A random (config, focus) request over the given topics, policies and
/// factors. Year ranges start on decade boundaries so configurations repeat.
pub fn random_request<R: Rng>(rng: &mut R, topics: &[String], policies: &[String], factors: &[String]) -> ApiRequest {
    let mut q: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: String| q.push((k.to_string(), v));
    let topic = if rng.random::<f64>() < 0.5 { None } else { topics.choose(rng).cloned() };
    if let Some(t) = &topic {
        push("topic", t.clone());
    }
    if rng.random::<f64>() < 0.5 {
        let from = 1950 + 10 * rng.random_range(0..4);
        push("from", from.to_string());
        push("to", (from + 10 * rng.random_range(2..=5)).min(2017).to_string());
    }
    match rng.random_range(0..3) {
        0 => push("measurement", CENTRALITIES.choose(rng).unwrap().to_string()),
        1 => push("method", "StaticInnovativeness".into()),
        _ if !factors.is_empty() => {
            push("method", "ContextualFactor".into());
            push("measurement", factors.choose(rng).unwrap().clone());
            match rng.random_range(0..3) {
                0 => push("basis", "all-range".into()),
                1 => push("basis", "years-range".into()),
                _ => {
                    push("basis", "one-year".into());
                    push("basis_year", rng.random_range(1950..=2017).to_string());
                }
            }
        }
        _ => {}
    }
    if rng.random::<bool>() {
        push("state_sort", "measurement-desc".into());
    }
    match rng.random_range(0..3) {
        0 => push("policy_sort", "total-adoptions-desc".into()),
        1 => push("policy_sort", format!("policy-activity({})", STATES.choose(rng).unwrap())),
        _ => {}
    }
    let state = STATES.choose(rng).unwrap().to_string();
    let policy = policies.choose(rng).unwrap().clone();
    let path = match rng.random_range(0..8) {
        0 => {
            push("state", state);
            if topic.is_none() && rng.random::<bool>() {
                push("focus_topic", topics.choose(rng).unwrap().clone());
            }
            "patterns"
        }
        1 => "matrix",
        2 => "map",
        3 => {
            if rng.random::<bool>() {
                push("state", state);
            }
            "adoptions/year"
        }
        4 => {
            if rng.random::<bool>() {
                push("policy", policy);
            }
            push("shared_domain", rng.random::<bool>().to_string());
            "adoptions/state"
        }
        5 => {
            push("state", state);
            "adoptions/topic"
        }
        6 if !factors.is_empty() => {
            push("policy", policy);
            push("state", state);
            push("factor", factors.choose(rng).unwrap().clone());
            "adoptions/context"
        }
        _ => {
            return ApiRequest { path: format!("cox/{policy}"), query: Vec::new() };
        }
    };
    ApiRequest { path: path.to_string(), query: q }
}
