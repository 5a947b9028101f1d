//! Per-policy adoption cascades and creation/adoption tallies.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AdoptionTable, StateCode, Topic, STATE_CODES};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeEvent {
    /// Index into [`CascadeSet::nodes`].
    pub node: usize,
    pub time: f64,
}

/// Adoption sequence of one policy, sorted by time then node index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub id: String,
    pub events: Vec<CascadeEvent>,
}

impl Cascade {
    pub fn new(id: impl Into<String>, mut events: Vec<CascadeEvent>) -> Self {
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.node.cmp(&b.node)));
        Cascade { id: id.into(), events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn time_of(&self, node: usize) -> Option<f64> {
        self.events.iter().find(|e| e.node == node).map(|e| e.time)
    }
}

/// Cascades over a fixed node universe. Node labels are kept sorted so that
/// index order equals label order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeSet {
    pub nodes: Vec<String>,
    pub cascades: Vec<Cascade>,
}

impl CascadeSet {
    pub fn new(nodes: Vec<String>, cascades: Vec<Cascade>) -> Self {
        debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]), "node labels must be sorted and unique");
        CascadeSet { nodes, cascades }
    }

    pub fn node_index(&self, label: &str) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.as_str().cmp(label)).ok()
    }

    pub fn total_events(&self) -> usize {
        self.cascades.iter().map(Cascade::len).sum()
    }

    pub fn get(&self, id: &str) -> Option<&Cascade> {
        self.cascades.iter().find(|c| c.id == id)
    }

    /// One JSON object per cascade: `{"policy_id": .., "events": [[state, year], ..]}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.cascades {
            let events: Vec<(&str, f64)> = c.events.iter().map(|e| (self.nodes[e.node].as_str(), e.time)).collect();
            let line = serde_json::json!({ "policy_id": c.id, "events": events });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// One cascade per policy over the 50-state universe, ordered by policy id.
pub fn build_cascades(table: &AdoptionTable) -> CascadeSet {
    let nodes = STATE_CODES.iter().map(|s| s.to_string()).collect();
    let ids: Vec<&String> = table.policies.keys().collect();
    let cascades = ids
        .par_iter()
        .map(|id| {
            let events = table
                .records_for(id)
                .map(|r| CascadeEvent { node: r.state.index(), time: f64::from(r.year) })
                .collect();
            Cascade::new(id.as_str(), events)
        })
        .filter(|c| !c.is_empty())
        .collect();
    CascadeSet::new(nodes, cascades)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    /// Adoptions in the policy's first year.
    pub creations: u32,
    /// Adoptions of an already existing policy.
    pub adoptions: u32,
}

impl Tally {
    pub fn total(&self) -> u32 {
        self.creations + self.adoptions
    }

    fn add(&mut self, creation: bool) {
        if creation {
            self.creations += 1;
        } else {
            self.adoptions += 1;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdoptionStats {
    pub by_year: BTreeMap<i32, Tally>,
    pub by_state: BTreeMap<StateCode, Tally>,
    pub by_topic: BTreeMap<Topic, Tally>,
}

impl AdoptionStats {
    pub fn grand_total(&self) -> u32 {
        self.by_year.values().map(Tally::total).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StatsFocus {
    State(StateCode),
    Policy(String),
    Topic(Topic),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CascadeError {
    #[error("unknown focus {0}")]
    UnknownFocus(String),
}

/// Creation vs. existing-policy adoption counts along the year, state and
/// topic axes, optionally restricted to one state, policy or topic.
pub fn adoption_stats(table: &AdoptionTable, focus: Option<&StatsFocus>) -> Result<AdoptionStats, CascadeError> {
    match focus {
        Some(StatsFocus::Policy(id)) if !table.policies.contains_key(id) => {
            return Err(CascadeError::UnknownFocus(format!("policy {id}")))
        }
        Some(StatsFocus::Topic(t)) if t.is_excluded() => return Err(CascadeError::UnknownFocus(format!("topic {t}"))),
        _ => {}
    }
    let mut stats = AdoptionStats::default();
    for r in &table.records {
        let meta = &table.policies[&r.policy_id];
        let keep = match focus {
            None => true,
            Some(StatsFocus::State(s)) => r.state == *s,
            Some(StatsFocus::Policy(p)) => &r.policy_id == p,
            Some(StatsFocus::Topic(t)) => meta.topic == *t,
        };
        if !keep {
            continue;
        }
        let creation = r.year == meta.first_year;
        stats.by_year.entry(r.year).or_default().add(creation);
        stats.by_state.entry(r.state).or_default().add(creation);
        stats.by_topic.entry(meta.topic).or_default().add(creation);
    }
    Ok(stats)
}

/// Topics ordered by the state's adoption count, descending, ties and
/// zero-activity topics alphabetical.
pub fn policy_activity_order(table: &AdoptionTable, state: StateCode) -> Vec<(Topic, u32)> {
    let mut counts: BTreeMap<Topic, u32> = Topic::analyzed().into_iter().map(|t| (t, 0)).collect();
    for r in table.records.iter().filter(|r| r.state == state) {
        *counts.entry(table.policies[&r.policy_id].topic).or_default() += 1;
    }
    let mut ordered: Vec<(Topic, u32)> = counts.into_iter().collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.label().cmp(b.0.label())));
    ordered
}

/// Policies of `topic` with the ones adopted by `state` first, each group
/// alphabetical by display name.
pub fn policy_activity_order_in_topic(table: &AdoptionTable, state: StateCode, topic: Topic) -> Vec<String> {
    let mut policies: Vec<(u32, &str, &str)> = table
        .policies
        .values()
        .filter(|p| p.topic == topic)
        .map(|p| {
            let n = table.records_for(&p.policy_id).filter(|r| r.state == state).count() as u32;
            (n, p.display_name.as_str(), p.policy_id.as_str())
        })
        .collect();
    policies.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(b.2)));
    policies.into_iter().map(|(_, _, id)| id.to_string()).collect()
}
