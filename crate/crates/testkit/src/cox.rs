//! Synthetic person-period tables and a derivative-free partial-likelihood
//! maximizer used as the reference for the Newton fit.

use diffusion_core::ingest::StateCode;
use diffusion_core::survival::{PersonPeriodRow, PersonPeriodTable};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct Row {
    pub subject: usize,
    pub time: i32,
    pub x: Vec<f64>,
    pub event: bool,
}

/// Discrete-time adoption process: each at-risk subject adopts in a year
/// with probability `1 - exp(-h0 * exp(x . beta))`, covariates drift yearly.
pub fn generate<R: Rng>(rng: &mut R, subjects: usize, years: i32, beta: &[f64], h0: f64) -> Vec<Row> {
    let mut rows = Vec::new();
    for s in 0..subjects {
        let base: Vec<f64> = beta.iter().map(|_| StandardNormal.sample(rng)).collect();
        for t in 1..=years {
            let x: Vec<f64> = base
                .iter()
                .map(|b| {
                    let noise: f64 = StandardNormal.sample(rng);
                    b + 0.3 * noise
                })
                .collect();
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            let event = rng.random::<f64>() < 1.0 - (-h0 * eta.exp()).exp();
            rows.push(Row { subject: s, time: t, x, event });
            if event {
                break;
            }
        }
    }
    rows
}

pub fn to_table(rows: &[Row], factors: &[&str]) -> PersonPeriodTable {
    PersonPeriodTable {
        policy_id: "synthetic".into(),
        factors: factors.iter().map(|s| s.to_string()).collect(),
        rows: rows
            .iter()
            .map(|r| PersonPeriodRow {
                state: StateCode::from_index(r.subject).expect("at most 50 subjects"),
                year: 2000 + r.time,
                covariates: r.x.clone(),
                event: r.event,
            })
            .collect(),
    }
}

/// Efron partial log-likelihood written directly from its definition.
pub fn efron_log_likelihood(rows: &[Row], beta: &[f64]) -> f64 {
    let eta = |r: &Row| -> f64 { r.x.iter().zip(beta).map(|(a, b)| a * b).sum() };
    let mut times: Vec<i32> = rows.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort();
    times.dedup();
    let mut ll = 0.0;
    for t in times {
        let at_risk: Vec<&Row> = rows.iter().filter(|r| r.time == t).collect();
        let failures: Vec<&Row> = at_risk.iter().copied().filter(|r| r.event).collect();
        let d = failures.len() as f64;
        let risk_sum: f64 = at_risk.iter().map(|r| eta(r).exp()).sum();
        let fail_sum: f64 = failures.iter().map(|r| eta(r).exp()).sum();
        for (l, r) in failures.iter().enumerate() {
            ll += eta(r) - (risk_sum - l as f64 / d * fail_sum).ln();
        }
    }
    ll
}

/// Dense grid over `[-3, 3]^p` followed by compass search.
pub fn brute_force_maximize(rows: &[Row], p: usize) -> Vec<f64> {
    let f = |b: &[f64]| efron_log_likelihood(rows, b);
    let grid: Vec<f64> = (0..=30).map(|i| -3.0 + 0.2 * i as f64).collect();
    let mut best = vec![0.0; p];
    let mut best_val = f(&best);
    let mut idx = vec![0usize; p];
    loop {
        let point: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let v = f(&point);
        if v > best_val {
            best_val = v;
            best = point;
        }
        let mut k = 0;
        while k < p {
            idx[k] += 1;
            if idx[k] < grid.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == p {
            break;
        }
    }
    let mut step = 0.1;
    while step > 1e-10 {
        let mut improved = false;
        for k in 0..p {
            for dir in [1.0, -1.0] {
                let mut trial = best.clone();
                trial[k] += dir * step;
                let v = f(&trial);
                if v > best_val {
                    best_val = v;
                    best = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Root of the single-covariate Cox score equation by bisection. Subjects
/// are given as (stop time, covariate, event), with distinct event times.
pub fn single_covariate_root(subjects: &[(i32, f64, bool)]) -> f64 {
    let score = |beta: f64| -> f64 {
        subjects
            .iter()
            .filter(|s| s.2)
            .map(|&(t, x, _)| {
                let risk: Vec<f64> = subjects.iter().filter(|s| s.0 >= t).map(|s| s.1).collect();
                let s0: f64 = risk.iter().map(|v| (beta * v).exp()).sum();
                let s1: f64 = risk.iter().map(|v| v * (beta * v).exp()).sum();
                x - s1 / s0
            })
            .sum()
    };
    let (mut lo, mut hi) = (-20.0, 20.0);
    assert!(score(lo) > 0.0 && score(hi) < 0.0, "score must change sign");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
