//! Cox proportional-hazards fits on person-period (state-year) data.
//!
//! Each policy yields one table: every state is at risk from the policy's
//! first adoption year until it adopts, or until the policy's last adoption
//! year when it never does. Calendar year is the time axis, so the risk set
//! at year `t` is exactly the rows for year `t`. Ties are handled with the
//! Efron approximation by default.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AdoptionTable, CovariatePanel, StateCode};
use crate::netinf::upper_normal_tail;

pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const COLLINEARITY_TOLERANCE: f64 = 1e-10;
/// Standardized coefficients beyond this magnitude are treated as divergent.
pub const SEPARATION_THRESHOLD: f64 = 30.0;
const MAX_STEP_HALVINGS: usize = 60;
const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
    #[error("no covariates for {state} in {year}")]
    PanelCoverageGap { state: String, year: i32 },
    #[error("no adoption events in the person-period table")]
    NoEvents,
    #[error("no usable covariates after dropping constant and collinear columns")]
    NoUsableCovariates,
    #[error("row {row} has {got} covariates, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonPeriodRow {
    pub state: StateCode,
    pub year: i32,
    pub covariates: Vec<f64>,
    pub event: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonPeriodTable {
    pub policy_id: String,
    pub factors: Vec<String>,
    pub rows: Vec<PersonPeriodRow>,
}

impl PersonPeriodTable {
    pub fn event_count(&self) -> usize {
        self.rows.iter().filter(|r| r.event).count()
    }

    pub fn rows_for(&self, state: StateCode) -> impl Iterator<Item = &PersonPeriodRow> {
        self.rows.iter().filter(move |r| r.state == state)
    }
}

/// Person-period rows for one policy over all 50 states. `table` must be the
/// unfiltered adoption table so first/last years are the policy's own.
pub fn build_person_periods(
    policy_id: &str,
    table: &AdoptionTable,
    panel: &CovariatePanel,
) -> Result<PersonPeriodTable, SurvivalError> {
    let meta = table.policy(policy_id).ok_or_else(|| SurvivalError::UnknownPolicy(policy_id.to_string()))?;
    let mut adopted: [Option<i32>; 50] = [None; 50];
    for r in table.records_for(policy_id) {
        adopted[r.state.index()] = Some(r.year);
    }
    let mut rows = Vec::new();
    for state in StateCode::all() {
        let stop = adopted[state.index()].unwrap_or(meta.last_year);
        for year in meta.first_year..=stop {
            let covariates = panel
                .row(state, year)
                .filter(|vals| vals.iter().all(|v| !v.is_nan()))
                .ok_or_else(|| SurvivalError::PanelCoverageGap { state: state.to_string(), year })?
                .to_vec();
            let event = adopted[state.index()] == Some(year);
            rows.push(PersonPeriodRow { state, year, covariates, event });
        }
    }
    Ok(PersonPeriodTable { policy_id: policy_id.to_string(), factors: panel.factors.clone(), rows })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieMethod {
    #[default]
    Efron,
    Breslow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub ties: TieMethod,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions { ties: TieMethod::Efron, max_iterations: DEFAULT_MAX_ITERATIONS, tolerance: DEFAULT_TOLERANCE }
    }
}

/// Partial log-likelihood with its gradient and Hessian at one point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub log_likelihood: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Design matrix grouped into risk sets by time.
#[derive(Clone, Debug)]
pub struct RiskSets {
    x: DMatrix<f64>,
    /// Row ranges sharing one time, each with events first.
    groups: Vec<(usize, usize, usize)>,
    ties: TieMethod,
}

impl RiskSets {
    /// `times[i]` is the risk-set key of row `i`: rows sharing a key are at
    /// risk together.
    pub fn new(times: &[i64], x: &DMatrix<f64>, events: &[bool], ties: TieMethod) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by_key(|&i| (times[i], !events[i], i));
        let x_sorted = DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(order[r], c)]);
        let mut groups = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let t = times[order[start]];
            let mut end = start;
            while end < order.len() && times[order[end]] == t {
                end += 1;
            }
            let d = order[start..end].iter().filter(|&&i| events[i]).count();
            if d > 0 {
                groups.push((start, end, d));
            }
            start = end;
        }
        RiskSets { x: x_sorted, groups, ties }
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn evaluate(&self, beta: &DVector<f64>) -> Evaluation {
        let p = self.dim();
        let eta = &self.x * beta;
        let mut ll = 0.0;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for &(start, end, d) in &self.groups {
            let shift = (start..end).map(|i| eta[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut s0 = 0.0;
            let mut s1 = DVector::zeros(p);
            let mut s2 = DMatrix::zeros(p, p);
            let mut d0 = 0.0;
            let mut d1 = DVector::zeros(p);
            let mut d2 = DMatrix::zeros(p, p);
            for i in start..end {
                let xi = self.x.row(i).transpose();
                let w = (eta[i] - shift).exp();
                let wx = &xi * w;
                let wxx = &wx * xi.transpose();
                if i < start + d {
                    ll += eta[i];
                    grad += &xi;
                    d0 += w;
                    d1 += &wx;
                    d2 += &wxx;
                }
                s0 += w;
                s1 += wx;
                s2 += wxx;
            }
            for l in 0..d {
                let frac = match self.ties {
                    TieMethod::Efron => l as f64 / d as f64,
                    TieMethod::Breslow => 0.0,
                };
                let den = s0 - frac * d0;
                let num1 = &s1 - &d1 * frac;
                let num2 = &s2 - &d2 * frac;
                ll -= den.ln() + shift;
                let mean = &num1 / den;
                grad -= &mean;
                hess -= num2 / den - &mean * mean.transpose();
            }
        }
        Evaluation { log_likelihood: ll, gradient: grad, hessian: hess }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropReason {
    Constant,
    Collinear,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::Constant => "constant",
            DropReason::Collinear => "collinear",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorEstimate {
    pub factor: String,
    pub coefficient: f64,
    pub hazard_ratio: f64,
    pub std_error: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub dropped: Option<DropReason>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    Nonconvergence,
    SeparationDetected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub policy_id: String,
    pub factors: Vec<FactorEstimate>,
    pub converged: bool,
    pub status: FitStatus,
    pub iterations: usize,
    pub log_partial_likelihood: f64,
    /// Log partial likelihood at the start and after every accepted step.
    pub log_likelihood_history: Vec<f64>,
    pub dropped_factors: Vec<String>,
    pub n_rows: usize,
    pub n_events: usize,
    pub ties: TieMethod,
}

impl CoxFit {
    pub fn coefficients(&self) -> Vec<f64> {
        self.factors.iter().map(|f| f.coefficient).collect()
    }

    pub fn hazard_ratios(&self) -> Vec<f64> {
        self.factors.iter().map(|f| f.hazard_ratio).collect()
    }

    pub fn factor(&self, name: &str) -> Option<&FactorEstimate> {
        self.factors.iter().find(|f| f.factor == name)
    }
}

/// Column-wise mean and sample sd; constant columns have sd 0.
fn column_moments(x: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let var = if x.nrows() > 1 { c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            let constant = c.iter().all(|&v| v == c[0]);
            (mean, if constant { 0.0 } else { var.sqrt() })
        })
        .collect()
}

/// Greedy Gram-Schmidt in column order: a column is kept when its residual
/// against the kept columns is not negligible.
fn independent_columns(z: &DMatrix<f64>, candidates: &[usize]) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for &c in candidates {
        let col = z.column(c).into_owned();
        let norm = col.norm();
        let mut r = col;
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        let rn = r.norm();
        if norm > 0.0 && rn > COLLINEARITY_TOLERANCE * norm {
            basis.push(r / rn);
            kept.push(c);
        }
    }
    kept
}

/// Fits the Cox model by Newton iterations with step-halving on internally
/// standardized covariates; estimates are reported on the original scale.
pub fn fit_cox(periods: &PersonPeriodTable, options: &CoxOptions) -> Result<CoxFit, SurvivalError> {
    let p = periods.factors.len();
    for (i, r) in periods.rows.iter().enumerate() {
        if r.covariates.len() != p {
            return Err(SurvivalError::RaggedRow { row: i, got: r.covariates.len(), expected: p });
        }
    }
    let n_events = periods.event_count();
    if n_events == 0 {
        return Err(SurvivalError::NoEvents);
    }
    let n = periods.rows.len();
    let x = DMatrix::from_fn(n, p, |r, c| periods.rows[r].covariates[c]);
    let moments = column_moments(&x);

    let mut dropped: Vec<Option<DropReason>> =
        moments.iter().map(|&(_, sd)| (sd == 0.0).then_some(DropReason::Constant)).collect();
    let z_all = DMatrix::from_fn(n, p, |r, c| {
        let (mean, sd) = moments[c];
        if sd > 0.0 {
            (x[(r, c)] - mean) / sd
        } else {
            0.0
        }
    });
    let nonconstant: Vec<usize> = (0..p).filter(|&c| dropped[c].is_none()).collect();
    let kept = independent_columns(&z_all, &nonconstant);
    for &c in &nonconstant {
        if !kept.contains(&c) {
            dropped[c] = Some(DropReason::Collinear);
        }
    }
    if kept.is_empty() {
        return Err(SurvivalError::NoUsableCovariates);
    }

    let z = DMatrix::from_fn(n, kept.len(), |r, k| z_all[(r, kept[k])]);
    let times: Vec<i64> = periods.rows.iter().map(|r| i64::from(r.year)).collect();
    let events: Vec<bool> = periods.rows.iter().map(|r| r.event).collect();
    let risk = RiskSets::new(&times, &z, &events, options.ties);

    let k = kept.len();
    let mut beta = DVector::zeros(k);
    let mut current = risk.evaluate(&beta);
    let mut history = vec![current.log_likelihood];
    let mut status = FitStatus::Nonconvergence;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let Some(step) = newton_step(&current) else { break };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_STEP_HALVINGS {
            let candidate = &beta + &step * scale;
            let eval = risk.evaluate(&candidate);
            if eval.log_likelihood.is_finite() && eval.log_likelihood >= current.log_likelihood {
                accepted = Some((candidate, eval));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, eval)) = accepted else {
            // No ascent possible along the Newton direction: at the optimum up to rounding.
            status = FitStatus::Converged;
            break;
        };
        let change = (&next - &beta).amax();
        beta = next;
        current = eval;
        history.push(current.log_likelihood);
        if beta.amax() > SEPARATION_THRESHOLD {
            status = FitStatus::SeparationDetected;
            break;
        }
        if change < options.tolerance {
            status = FitStatus::Converged;
            break;
        }
    }

    let covariance = (-current.hessian.clone()).try_inverse();
    let mut factors = Vec::with_capacity(p);
    for (c, name) in periods.factors.iter().enumerate() {
        if let Some(reason) = dropped[c] {
            factors.push(FactorEstimate {
                factor: name.clone(),
                coefficient: 0.0,
                hazard_ratio: 1.0,
                std_error: None,
                z: None,
                p_value: None,
                ci_low: None,
                ci_high: None,
                dropped: Some(reason),
            });
            continue;
        }
        let j = kept.iter().position(|&kc| kc == c).expect("kept column");
        let sd = moments[c].1;
        let coefficient = beta[j] / sd;
        let std_error = covariance.as_ref().map(|cov| cov[(j, j)].sqrt() / sd).filter(|se| se.is_finite() && *se > 0.0);
        let z = std_error.map(|se| coefficient / se);
        factors.push(FactorEstimate {
            factor: name.clone(),
            coefficient,
            hazard_ratio: coefficient.exp(),
            std_error,
            z,
            p_value: z.map(|z| (2.0 * upper_normal_tail(z.abs())).min(1.0)),
            ci_low: std_error.map(|se| (coefficient - Z_95 * se).exp()),
            ci_high: std_error.map(|se| (coefficient + Z_95 * se).exp()),
            dropped: None,
        });
    }

    Ok(CoxFit {
        policy_id: periods.policy_id.clone(),
        factors,
        converged: status == FitStatus::Converged,
        status,
        iterations,
        log_partial_likelihood: current.log_likelihood,
        log_likelihood_history: history,
        dropped_factors: periods
            .factors
            .iter()
            .zip(&dropped)
            .filter(|(_, d)| d.is_some())
            .map(|(f, _)| f.clone())
            .collect(),
        n_rows: n,
        n_events,
        ties: options.ties,
    })
}

/// Solves `(-H) step = g`; None when the information matrix is singular.
fn newton_step(eval: &Evaluation) -> Option<DVector<f64>> {
    let info = -eval.hessian.clone();
    if let Some(chol) = info.clone().cholesky() {
        return Some(chol.solve(&eval.gradient));
    }
    info.lu().solve(&eval.gradient)
}

/// Person-period construction and fit for every policy, in parallel.
pub fn fit_all(
    table: &AdoptionTable,
    panel: &CovariatePanel,
    options: &CoxOptions,
) -> Vec<(String, Result<CoxFit, SurvivalError>)> {
    let ids: Vec<&String> = table.policies.keys().collect();
    ids.par_iter()
        .map(|id| {
            let fit = build_person_periods(id, table, panel).and_then(|pp| fit_cox(&pp, options));
            (id.to_string(), fit)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardReportEntry {
    pub factor: String,
    pub hazard_ratio: f64,
    pub coefficient: f64,
    pub p_value: Option<f64>,
    pub significant: bool,
    /// "*" when p < 0.05, empty otherwise.
    pub marker: String,
    pub tag: Option<String>,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Factors by descending hazard ratio, dropped factors last.
pub fn hazard_report(fit: &CoxFit) -> Vec<HazardReportEntry> {
    let mut entries: Vec<(bool, HazardReportEntry)> = fit
        .factors
        .iter()
        .map(|f| {
            let significant = f.dropped.is_none() && f.p_value.is_some_and(|p| p < SIGNIFICANCE_LEVEL);
            let entry = HazardReportEntry {
                factor: f.factor.clone(),
                hazard_ratio: f.hazard_ratio,
                coefficient: f.coefficient,
                p_value: f.p_value,
                significant,
                marker: if significant { "*".into() } else { String::new() },
                tag: f.dropped.map(|d| format!("dropped: {d}")),
            };
            (f.dropped.is_some(), entry)
        })
        .collect();
    entries.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| b.1.hazard_ratio.total_cmp(&a.1.hazard_ratio))
            .then_with(|| a.1.factor.cmp(&b.1.factor))
    });
    entries.into_iter().map(|(_, e)| e).collect()
}
