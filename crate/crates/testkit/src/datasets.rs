//! Synthetic adoption datasets in the input CSV layouts.

use std::collections::BTreeMap;
use std::fmt::Write;

use diffusion_core::ingest::{
    AdoptionRecord, AdoptionTable, PolicyMeta, StateCode, Topic, DEFAULT_FACTORS, STATE_CODES,
};
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::rng;

#[derive(Clone, Debug)]
pub struct SyntheticCsv {
    pub events: String,
    pub meta: String,
    pub panel: String,
}

const TOPICS: [Topic; 6] =
    [Topic::LawAndCrime, Topic::CivilRights, Topic::Health, Topic::Education, Topic::Environment, Topic::SocialWelfare];

/// Deterministic dataset: `policies` policies spread over a hidden 50-state
/// network between 1950 and 2017, and a 14-factor panel for 1940-2017 with
/// decade-only factors and Nebraska's partisan counts left empty.
pub fn synthetic_csv(seed: u64, policies: usize) -> SyntheticCsv {
    let mut rng = rng(seed);
    let mut hidden: Vec<Vec<usize>> = vec![Vec::new(); 50];
    for (s, out) in hidden.iter_mut().enumerate() {
        for _ in 0..3 {
            let t = rng.random_range(0..50);
            if t != s && !out.contains(&t) {
                out.push(t);
            }
        }
    }

    let mut events = String::from("state,policy,adopt_year\n");
    let mut meta = String::from("policy,policy_name,topic\n");
    for p in 0..policies {
        let id = format!("pol{p:03}");
        let topic = TOPICS[p % TOPICS.len()];
        let name = if p == 0 {
            "Laws establishing Hate Crimes against Minorities".to_string()
        } else {
            format!("{} policy {p}", topic.label())
        };
        writeln!(meta, "{id},\"{name}\",{}", topic.label()).unwrap();

        let start = rng.random_range(1950..2005);
        let mut year: [Option<i32>; 50] = [None; 50];
        let roots = if rng.random::<f64>() < 0.2 { 2 } else { 1 };
        for _ in 0..roots {
            year[rng.random_range(0..50)] = Some(start);
        }
        // Annual spread: each adopter infects each out-neighbour with some probability per year.
        for y in start..=2017 {
            let adopters: Vec<usize> = (0..50).filter(|&s| year[s].is_some_and(|a| a < y)).collect();
            for s in adopters {
                for &t in &hidden[s] {
                    if year[t].is_none() && rng.random::<f64>() < 0.35 {
                        year[t] = Some(y);
                    }
                }
            }
            for slot in year.iter_mut().filter(|v| v.is_none()) {
                if rng.random::<f64>() < 0.004 {
                    *slot = Some(y);
                }
            }
        }
        for (s, y) in year.iter().enumerate() {
            if let Some(y) = y {
                writeln!(events, "{},{id},{y}", STATE_CODES[s]).unwrap();
            }
        }
    }

    let mut panel = String::from("state,year");
    for f in DEFAULT_FACTORS {
        write!(panel, ",{f}").unwrap();
    }
    panel.push('\n');
    for (s, code) in STATE_CODES.iter().enumerate() {
        let base: Vec<f64> = (0..DEFAULT_FACTORS.len()).map(|f| (s * 7 + f * 13) as f64 % 17.0 + 1.0).collect();
        for y in 1940..=2017 {
            write!(panel, "{code},{y}").unwrap();
            for (f, name) in DEFAULT_FACTORS.iter().enumerate() {
                let decade_only = matches!(*name, "Foreign Born" | "African American");
                let partisan = matches!(*name, "Senate Democrats" | "House Democrats");
                let missing = (decade_only && y % 10 != 0) || (partisan && *code == "NE") || rng.random::<f64>() < 0.03;
                if missing {
                    panel.push(',');
                } else {
                    let trend = f64::from(y - 1940) * 0.01 * ((f % 3) as f64 - 1.0);
                    let noise = rng.random::<f64>() * 0.5;
                    write!(panel, ",{:.4}", base[f] + trend + noise).unwrap();
                }
            }
            panel.push('\n');
        }
    }
    SyntheticCsv { events, meta, panel }
}

/// Random table over a few policies and states for property tests.
pub fn random_table<R: Rng>(rng: &mut R, policies: usize, window: (i32, i32)) -> AdoptionTable {
    let mut records = Vec::new();
    let mut metas = BTreeMap::new();
    let topics = [Topic::Health, Topic::Education, Topic::LawAndCrime];
    for p in 0..policies {
        let id = format!("p{p}");
        let adopters = rng.random_range(1..=12);
        let states: Vec<usize> = (0..50).collect::<Vec<_>>().choose_multiple(rng, adopters).copied().collect();
        let mut years = Vec::new();
        for s in states {
            let y = rng.random_range(window.0..=window.1);
            years.push(y);
            records.push(AdoptionRecord { state: StateCode::from_index(s).unwrap(), policy_id: id.clone(), year: y });
        }
        metas.insert(
            id.clone(),
            PolicyMeta {
                policy_id: id,
                display_name: format!("Policy {p}"),
                topic: topics[p % topics.len()],
                first_year: *years.iter().min().unwrap(),
                last_year: *years.iter().max().unwrap(),
            },
        );
    }
    AdoptionTable::from_parts(records, metas)
}
