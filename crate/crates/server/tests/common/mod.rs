#![allow(dead_code)]

use std::path::Path;

use diffusion_core::ingest::{
    impute_covariates, parse_adoption_data, parse_covariate_panel, ImputationRules, YearRange, DEFAULT_FACTORS,
};
use diffusion_core::store::DataSnapshot;
use diffusion_server::Service;
use diffusion_testkit::datasets::synthetic_csv;
use serde_json::Value;

pub fn snapshot(seed: u64, policies: usize) -> DataSnapshot {
    let csv = synthetic_csv(seed, policies);
    let table = parse_adoption_data(csv.events.as_bytes(), csv.meta.as_bytes()).unwrap();
    let factors: Vec<String> = DEFAULT_FACTORS.iter().map(|s| s.to_string()).collect();
    let raw = parse_covariate_panel(csv.panel.as_bytes(), &factors).unwrap();
    let panel = impute_covariates(&raw, YearRange::new(1940, 2017), &ImputationRules::default()).unwrap();
    DataSnapshot { table, panel: Some(panel) }
}

pub fn service(cache: Option<&Path>) -> Service {
    Service::from_snapshot(snapshot(3, 36), cache)
}

pub fn pairs(q: &[(&str, &str)]) -> Vec<(String, String)> {
    q.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

pub fn get(svc: &Service, path: &str, q: &[(&str, &str)]) -> (u16, Value) {
    let (status, body) = svc.dispatch(path, &pairs(q));
    (status, serde_json::from_slice(&body).expect("body is JSON"))
}

pub fn ok(svc: &Service, path: &str, q: &[(&str, &str)]) -> Value {
    let (status, v) = get(svc, path, q);
    assert_eq!(status, 200, "{path} {q:?}: {v}");
    v
}
