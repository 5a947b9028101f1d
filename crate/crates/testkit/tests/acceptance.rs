//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Data-dependent targets need the reference dataset ingested into the
//! directory named by `REFERENCE_DATA_DIR` (see `diffusion ingest`); without
//! it they print NOT RUN. Only failures of the hard criteria fail the run.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use diffusion_core::cascade::{adoption_stats, build_cascades, CascadeSet};
use diffusion_core::ingest::{
    filter_adoptions, impute_covariates, parse_adoption_data, parse_covariate_panel, AdoptionRecord, AdoptionTable,
    CovariatePanel, ImputationRules, StateCode, YearRange, DEFAULT_FACTORS,
};
use diffusion_core::metrics::{
    closeness_centrality, degree_centrality, pagerank, quartile_bins, static_innovativeness, ClosenessDirection,
    DegreeKind, Digraph,
};
use diffusion_core::netinf::{infer_network, DiffusionNetwork, InferenceParams, BACKGROUND};
use diffusion_core::store::DataSnapshot;
use diffusion_core::survival::{build_person_periods, fit_cox, CoxOptions, RiskSets, TieMethod};
use diffusion_server::Service;
use diffusion_testkit::cox::{brute_force_maximize, generate, to_table, Row};
use diffusion_testkit::datasets::{random_table, synthetic_csv};
use diffusion_testkit::graphs::{closeness, degrees, pagerank_dense};
use diffusion_testkit::requests::random_request;
use diffusion_testkit::rng;
use diffusion_testkit::simulate::{node_labels, random_digraph, simulate_cascades, SimParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde_json::Value;

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Cox

fn cox_rows(seed: u64, p: usize) -> Vec<Row> {
    let beta = [0.5, -0.3, 0.2];
    let mut r = rng(seed);
    loop {
        let rows = generate(&mut r, 20, 5, &beta[..p], 0.15);
        if rows.len() <= 100 && rows.iter().filter(|r| r.event).count() >= 4 {
            return rows;
        }
    }
}

fn cox_oracle() -> Check {
    let start = Instant::now();
    let names = ["a", "b", "c"];
    let mut r = rng(55);
    let (mut worst_coef, mut worst_grad) = (0.0f64, 0.0f64);
    for t in 0..20u64 {
        let p = 2 + (t as usize % 2);
        let rows = cox_rows(5000 + t, p);
        let fit =
            fit_cox(&to_table(&rows, &names[..p]), &CoxOptions::default()).map_err(|e| format!("table {t}: {e}"))?;
        ensure(fit.converged, || format!("table {t} did not converge"))?;
        for (got, want) in fit.coefficients().iter().zip(brute_force_maximize(&rows, p)) {
            worst_coef = worst_coef.max((got - want).abs());
        }

        let x = DMatrix::from_fn(rows.len(), p, |i, c| rows[i].x[c]);
        let times: Vec<i64> = rows.iter().map(|r| i64::from(r.time)).collect();
        let events: Vec<bool> = rows.iter().map(|r| r.event).collect();
        let rs = RiskSets::new(&times, &x, &events, TieMethod::Efron);
        for _ in 0..5 {
            let beta: Vec<f64> = (0..p).map(|_| r.random_range(-1.5..1.5)).collect();
            let g = rs.evaluate(&DVector::from_row_slice(&beta)).gradient;
            let h = 1e-5;
            for k in 0..p {
                let (mut up, mut down) = (beta.clone(), beta.clone());
                up[k] += h;
                down[k] -= h;
                let fd = (rs.evaluate(&DVector::from_row_slice(&up)).log_likelihood
                    - rs.evaluate(&DVector::from_row_slice(&down)).log_likelihood)
                    / (2.0 * h);
                worst_grad = worst_grad.max((g[k] - fd).abs() / fd.abs().max(1.0));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("max |coef diff| {worst_coef:.2e}, max gradient rel err {worst_grad:.2e}, {secs:.2}s");
    ensure(worst_coef < 1e-4 && worst_grad < 1e-6 && secs < 10.0, || detail.clone())?;
    Ok(detail)
}

// NetInf

fn first_edges(net: &DiffusionNetwork, k: usize) -> Vec<(String, String)> {
    net.edges.iter().take(k).map(|e| (e.source.clone(), e.target.clone())).collect()
}

fn label_edges(edges: &[(usize, usize)]) -> BTreeSet<(String, String)> {
    let labels = node_labels(8);
    edges.iter().map(|&(s, t)| (labels[s].clone(), labels[t].clone())).collect()
}

fn netinf_recovery() -> Check {
    let start = Instant::now();
    let chain = [(0, 1), (1, 2), (2, 3)];
    let set = simulate_cascades(4, &chain, 200, SimParams::default(), &mut rng(7));
    let net = infer_network(&set, &InferenceParams::default()).map_err(|e| e.to_string())?;
    let first: BTreeSet<_> = first_edges(&net, 3).into_iter().collect();
    ensure(first == label_edges(&chain), || format!("chain: first edges {first:?}"))?;

    let mut total = 0.0;
    for g in 0..20u64 {
        let mut r = rng(1000 + g);
        let edges = random_digraph(8, 12, &mut r);
        let set = simulate_cascades(8, &edges, 300, SimParams::default(), &mut r);
        let net = infer_network(&set, &InferenceParams::default()).map_err(|e| e.to_string())?;
        let truth = label_edges(&edges);
        total += first_edges(&net, 12).iter().filter(|e| truth.contains(*e)).count() as f64 / 12.0;
    }
    let mean = total / 20.0;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("chain recovered; mean precision@12 {mean:.3} over 20 graphs, {secs:.2}s");
    ensure(mean >= 0.8 && secs < 60.0, || detail.clone())?;
    Ok(detail)
}

fn check_network(set: &CascadeSet, net: &DiffusionNetwork) -> Result<(), String> {
    ensure(net.edges.windows(2).all(|w| w[1].gain <= w[0].gain), || "gains increase".into())?;
    ensure(net.log_likelihood.windows(2).all(|w| w[1] >= w[0]), || "log-likelihood decreases".into())?;
    for e in &net.edges {
        let (s, t) = (set.node_index(&e.source).unwrap(), set.node_index(&e.target).unwrap());
        let supported =
            set.cascades.iter().any(|c| matches!((c.time_of(s), c.time_of(t)), (Some(a), Some(b)) if a < b));
        ensure(supported, || format!("edge {}->{} lacks temporal precedence", e.source, e.target))?;
    }
    for c in &set.cascades {
        for (target, source) in &net.parents[&c.id] {
            if source != BACKGROUND {
                ensure(net.has_edge(source, target), || format!("parent {source}->{target} is not an edge"))?;
            }
        }
    }
    Ok(())
}

fn netinf_properties() -> Check {
    let mut sets = Vec::new();
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let edges = random_digraph(8, 12, &mut r);
        sets.push(simulate_cascades(8, &edges, 150, SimParams::default(), &mut r));
    }
    let csv = synthetic_csv(3, 36);
    let table = parse_adoption_data(csv.events.as_bytes(), csv.meta.as_bytes()).map_err(|e| e.to_string())?;
    sets.push(build_cascades(&table));
    let mut edges = 0;
    for (i, set) in sets.iter().enumerate() {
        let a = infer_network(set, &InferenceParams::default()).map_err(|e| e.to_string())?;
        let b = infer_network(set, &InferenceParams::default()).map_err(|e| e.to_string())?;
        check_network(set, &a).map_err(|e| format!("run {i}: {e}"))?;
        ensure(a.to_json().into_bytes() == b.to_json().into_bytes(), || format!("run {i} is not deterministic"))?;
        edges += a.edges.len();
    }
    Ok(format!("{} runs, {edges} edges checked, double runs byte-identical", sets.len()))
}

// Metrics

fn random_graph<R: Rng>(r: &mut R) -> (usize, Vec<(usize, usize)>) {
    let n = r.random_range(1..=6);
    let density: f64 = r.random();
    let edges = (0..n)
        .flat_map(|s| (0..n).map(move |t| (s, t)))
        .filter(|&(s, t)| s != t)
        .filter(|_| r.random::<f64>() < density)
        .collect();
    (n, edges)
}

fn centrality_oracle() -> Check {
    let mut r = rng(4242);
    let (mut worst, mut worst_sum) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let (n, edges) = random_graph(&mut r);
        let labels = node_labels(n);
        let g = Digraph::new(labels.clone(), edges.clone());
        let deg = degrees(n, &edges);
        let (inn, out, tot) = (
            degree_centrality(&g, DegreeKind::In),
            degree_centrality(&g, DegreeKind::Out),
            degree_centrality(&g, DegreeKind::Total),
        );
        let close = closeness_centrality(&g, ClosenessDirection::In);
        let pr = pagerank(&g, 0.85, 1e-10).map_err(|e| e.to_string())?;
        let (close_o, pr_o) = (closeness(n, &edges), pagerank_dense(n, &edges, 0.85));
        for (v, l) in labels.iter().enumerate() {
            ensure(
                inn.get(l) == Some(deg[v].0 as f64)
                    && out.get(l) == Some(deg[v].1 as f64)
                    && tot.get(l) == Some((deg[v].0 + deg[v].1) as f64),
                || format!("graph {i}: degree mismatch at {l}"),
            )?;
            worst = worst.max((close.get(l).unwrap() - close_o[v]).abs()).max((pr.get(l).unwrap() - pr_o[v]).abs());
        }
        worst_sum = worst_sum.max((pr.values.values().sum::<f64>() - 1.0).abs());
    }
    let detail = format!("100 graphs; max closeness/PageRank diff {worst:.1e}, max |sum-1| {worst_sum:.1e}");
    ensure(worst < 1e-9 && worst_sum < 1e-9, || detail.clone())?;
    Ok(detail)
}

fn innovativeness() -> Check {
    let mut r = rng(11);
    let window = YearRange::new(1990, 2000);
    let mut monotone_checks = 0;
    for i in 0..200 {
        let count = r.random_range(1..8);
        let table = random_table(&mut r, count, (1985, 2005));
        let scores = static_innovativeness(&table, window, None).map_err(|e| e.to_string())?;
        ensure(scores.values.values().all(|v| (0.0..=1.0).contains(v)), || format!("table {i}: score outside [0, 1]"))?;

        let policy = table.policies.values().nth(r.random_range(0..table.policies.len())).unwrap().clone();
        let lo = policy.first_year.max(window.start);
        let adopted: Vec<StateCode> = table.records_for(&policy.policy_id).map(|x| x.state).collect();
        let Some(state) = StateCode::all().find(|s| !adopted.contains(s)) else { continue };
        if lo > window.end {
            continue;
        }
        let mut records = table.records.clone();
        records.push(AdoptionRecord {
            state,
            policy_id: policy.policy_id.clone(),
            year: r.random_range(lo..=window.end),
        });
        let mut policies = table.policies.clone();
        let meta = policies.get_mut(&policy.policy_id).unwrap();
        meta.last_year = meta.last_year.max(records.last().unwrap().year);
        let after = static_innovativeness(&AdoptionTable::from_parts(records, policies), window, None)
            .map_err(|e| e.to_string())?;
        ensure(after.get(state.as_str()).unwrap() >= scores.get(state.as_str()).unwrap(), || {
            format!("table {i}: extra adoption lowered {state}")
        })?;
        monotone_checks += 1;
    }

    let t = parse_adoption_data(
        b"state,policy,adopt_year\nCA,a,2000\nCA,b,2003\nWA,b,2003\n",
        b"policy,policy_name,topic\na,A,Health\nb,B,Health\n",
    )
    .map_err(|e| e.to_string())?;
    let s = static_innovativeness(&t, YearRange::new(1990, 2010), None).map_err(|e| e.to_string())?;
    ensure(s.get("CA") == Some(1.0) && s.get("NY") == Some(0.0), || {
        format!("boundaries: CA {:?}, NY {:?}", s.get("CA"), s.get("NY"))
    })?;
    Ok(format!("200 tables in [0, 1], {monotone_checks} monotonicity checks, full adopter 1.0, non-adopter 0.0"))
}

// Imputation

fn one_series(years: YearRange, factor: &str, obs: &[(i32, f64)]) -> CovariatePanel {
    let states = vec!["NE".parse::<StateCode>().unwrap(), "CA".parse().unwrap()];
    let mut p = CovariatePanel::new(states, years, vec![factor.to_string()]);
    for s in 0..2 {
        for &(y, v) in obs {
            p.set_observed(s, (y - years.start) as usize, 0, v);
        }
    }
    p
}

fn series(p: &CovariatePanel, state: &str, factor: &str) -> Vec<f64> {
    let s: StateCode = state.parse().unwrap();
    p.years.years().map(|y| p.get(s, y, factor).unwrap()).collect()
}

fn imputation() -> Check {
    let rules = ImputationRules::default();
    let run = |p: &CovariatePanel, range| impute_covariates(p, range, &rules).map_err(|e| e.to_string());

    let p = one_series(YearRange::new(2000, 2017), "Foreign Born", &[(2000, 9.0), (2010, 10.5)]);
    let out = run(&p, YearRange::new(2010, 2017))?;
    ensure(series(&out, "CA", "Foreign Born") == vec![10.5; 8], || "decade carry".into())?;

    let mut p = one_series(YearRange::new(1990, 1995), "Senate Democrats", &[]);
    for y in 0..6 {
        p.set_observed(1, y, 0, 20.0 + y as f64);
    }
    let out = run(&p, YearRange::new(1990, 1995))?;
    ensure(series(&out, "NE", "Senate Democrats") == vec![0.0; 6], || "Nebraska zero-fill".into())?;

    let p = one_series(YearRange::new(2000, 2004), "Crime Rate", &[(2000, 5.0), (2003, 8.0)]);
    let out = run(&p, YearRange::new(2000, 2004))?;
    ensure(series(&out, "CA", "Crime Rate") == vec![5.0, 5.0, 5.0, 8.0, 8.0], || "LOCF".into())?;

    let factors = ["Foreign Born", "Crime Rate", "House Democrats"];
    let states: Vec<StateCode> = StateCode::all().take(5).collect();
    for seed in 0..100u64 {
        let mut r = rng(seed);
        let years = YearRange::new(1980, 2000);
        let mut p = CovariatePanel::new(states.clone(), years, factors.iter().map(|f| f.to_string()).collect());
        for s in 0..states.len() {
            for f in 0..factors.len() {
                let anchor = r.random_range(0..years.len());
                for y in 0..years.len() {
                    if y == anchor || r.random::<f64>() < 0.4 {
                        p.set_observed(s, y, f, r.random_range(-10.0..10.0));
                    }
                }
            }
        }
        let start = r.random_range(1980..1990);
        let range = YearRange::new(start, start + r.random_range(1..10));
        let once = run(&p, range)?;
        let twice = run(&once, range)?;
        ensure(once.missing_count() == 0 && once == twice, || format!("panel {seed} is not idempotent"))?;
    }
    Ok("decade carry, Nebraska zero-fill and LOCF exact; idempotent on 100 random panels".into())
}

fn quartiles() -> Check {
    let to_map =
        |v: &[f64]| -> BTreeMap<String, f64> { v.iter().enumerate().map(|(i, &x)| (format!("s{i:02}"), x)).collect() };
    let bins: Vec<u8> = quartile_bins(&to_map(&[1.0, 2.0, 3.0, 4.0])).into_values().collect();
    ensure(bins == vec![0, 1, 2, 3], || format!("{{1,2,3,4}} -> {bins:?}"))?;
    let bins = quartile_bins(&to_map(&[7.5; 9]));
    ensure(bins.values().all(|&b| b == 0), || "constant input not all 0".into())?;
    let mut r = rng(77);
    for i in 0..100 {
        let n = r.random_range(2..50);
        let values: Vec<f64> = (0..n).map(|_| r.random_range(-50.0..50.0)).collect();
        let (a, b) = (r.random_range(0.01..100.0), r.random_range(-100.0..100.0));
        let moved: Vec<f64> = values.iter().map(|v| a * v + b).collect();
        ensure(quartile_bins(&to_map(&values)) == quartile_bins(&to_map(&moved)), || {
            format!("vector {i} not affine-invariant")
        })?;
    }
    Ok("{1,2,3,4} -> {0,1,2,3}; constant -> 0; affine-invariant on 100 vectors".into())
}

// API

fn synthetic_snapshot() -> Result<DataSnapshot, String> {
    let csv = synthetic_csv(3, 36);
    let table = parse_adoption_data(csv.events.as_bytes(), csv.meta.as_bytes()).map_err(|e| e.to_string())?;
    let factors: Vec<String> = DEFAULT_FACTORS.iter().map(|s| s.to_string()).collect();
    let raw = parse_covariate_panel(csv.panel.as_bytes(), &factors).map_err(|e| e.to_string())?;
    let panel =
        impute_covariates(&raw, YearRange::new(1940, 2017), &ImputationRules::default()).map_err(|e| e.to_string())?;
    Ok(DataSnapshot { table, panel: Some(panel) })
}

fn count(v: &Value) -> u64 {
    v.as_u64().unwrap_or(0)
}

fn api_determinism() -> Check {
    let snapshot = synthetic_snapshot()?;
    let cold = Service::from_snapshot(snapshot.clone(), None);
    let topics: Vec<String> = snapshot.table.topics().iter().map(|t| t.label().to_string()).collect();
    let policies: Vec<String> = snapshot.table.policies.keys().cloned().collect();
    let factors: Vec<String> = DEFAULT_FACTORS.iter().map(|s| s.to_string()).collect();
    let mut r = rng(2024);
    let requests: Vec<_> = (0..25).map(|_| random_request(&mut r, &topics, &policies, &factors)).collect();
    let first: Vec<_> = requests.iter().map(|q| cold.dispatch(&q.path, &q.query)).collect();
    for (q, (status, body)) in requests.iter().zip(&first) {
        ensure(*status == 200, || format!("{}: {status} {}", q.uri(), String::from_utf8_lossy(body)))?;
    }
    let warm: Vec<_> = requests.iter().map(|q| cold.dispatch(&q.path, &q.query)).collect();
    ensure(first == warm, || "warm responses differ from cold".into())?;
    let other = Service::from_snapshot(snapshot.clone(), None);
    let fresh: Vec<_> = requests.iter().map(|q| other.dispatch(&q.path, &q.query)).collect();
    ensure(first == fresh, || "a second service instance answers differently".into())?;

    let mut rows_checked = 0;
    for (from, to) in [(1950, 2017), (1970, 1990)] {
        let query = vec![("from".to_string(), from.to_string()), ("to".to_string(), to.to_string())];
        let (status, body) = cold.dispatch("matrix", &query);
        ensure(status == 200, || format!("matrix {from}-{to}: {status}"))?;
        let matrix: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        let filtered = filter_adoptions(&snapshot.table, None, YearRange::new(from, to)).map_err(|e| e.to_string())?;
        let stats = adoption_stats(&filtered, None).map_err(|e| e.to_string())?;
        let by_topic: BTreeMap<&str, u64> =
            stats.by_topic.iter().map(|(t, x)| (t.label(), u64::from(x.total()))).collect();
        for row in matrix["rows"].as_array().into_iter().flatten() {
            let key = row["key"].as_str().unwrap_or_default();
            let want = by_topic.get(key).copied().unwrap_or(0);
            ensure(count(&row["total"]) == want, || format!("{from}-{to} row {key}: {} vs {want}", row["total"]))?;
            rows_checked += 1;
        }
        for (state, tally) in &stats.by_state {
            let got = count(&matrix["column_totals"][state.as_str()]);
            ensure(got == u64::from(tally.total()), || {
                format!("{from}-{to} column {state}: {got} vs {}", tally.total())
            })?;
        }
    }
    Ok(format!("25 requests byte-identical cold/warm/fresh; {rows_checked} matrix rows reconcile with adoption stats"))
}

// Reference-data targets

fn reference() -> Option<Result<DataSnapshot, String>> {
    let dir = PathBuf::from(std::env::var_os("REFERENCE_DATA_DIR")?);
    Some(DataSnapshot::load(&dir).map_err(|e| format!("{}: {e}", dir.display())))
}

fn cox_reference() -> Outcome {
    let Some(data) = reference() else { return Outcome::NotRun("REFERENCE_DATA_DIR not set".into()) };
    let result = (|| -> Check {
        let data = data?;
        let panel = data.panel.as_ref().ok_or("reference data has no covariate panel")?;
        let policy = data
            .table
            .policies
            .values()
            .find(|p| p.display_name.to_lowercase().contains("hate crime"))
            .ok_or("no hate-crimes policy in reference data")?;
        let periods = build_person_periods(&policy.policy_id, &data.table, panel).map_err(|e| e.to_string())?;
        let fit = fit_cox(&periods, &CoxOptions::default()).map_err(|e| e.to_string())?;
        let mut ranked: Vec<_> = fit.factors.iter().filter(|f| f.dropped.is_none()).collect();
        ranked.sort_by(|a, b| b.hazard_ratio.total_cmp(&a.hazard_ratio));
        let top: Vec<String> = ranked
            .iter()
            .take(2)
            .map(|f| format!("{} HR {:.4} p {:.3}", f.factor, f.hazard_ratio, f.p_value.unwrap_or(f64::NAN)))
            .collect();
        let detail = format!("top hazard ratios: {}", top.join("; "));
        let expect = [("Dynamic State Innovativeness", 49.9389), ("Foreign Born", 16.9336)];
        let ok = ranked.len() >= 2
            && expect.iter().zip(&ranked).all(|((name, hr), f)| {
                f.factor == *name && f.p_value.is_some_and(|p| p < 0.05) && (f.hazard_ratio / hr - 1.0).abs() <= 0.2
            });
        ensure(ok, || detail.clone())?;
        Ok(detail)
    })();
    match result {
        Ok(d) => Outcome::Pass(d),
        Err(e) => Outcome::Fail(e),
    }
}

fn netinf_reference() -> Outcome {
    let Some(data) = reference() else { return Outcome::NotRun("REFERENCE_DATA_DIR not set".into()) };
    let result = (|| -> Check {
        let data = data?;
        let net =
            infer_network(&build_cascades(&data.table), &InferenceParams::default()).map_err(|e| e.to_string())?;
        let n = net.edges.len();
        let detail = format!("{n} edges at cutoff 0.05 (target 686 +/- 10%)");
        ensure((n as f64 - 686.0).abs() <= 68.6, || detail.clone())?;
        Ok(detail)
    })();
    match result {
        Ok(d) => Outcome::Pass(d),
        Err(e) => Outcome::Fail(e),
    }
}

fn hard(check: fn() -> Check) -> Outcome {
    match catch_unwind(AssertUnwindSafe(check)) {
        Ok(Ok(d)) => Outcome::Pass(d),
        Ok(Err(e)) => Outcome::Fail(e),
        Err(_) => Outcome::Fail("panicked".into()),
    }
}

/// (name, hard, run)
type Criterion = (&'static str, bool, Box<dyn Fn() -> Outcome>);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("Cox oracle equivalence", true, Box::new(|| hard(cox_oracle))),
        ("Cox reference target (soft)", false, Box::new(cox_reference)),
        ("NetInf synthetic recovery", true, Box::new(|| hard(netinf_recovery))),
        ("NetInf properties", true, Box::new(|| hard(netinf_properties))),
        ("NetInf reference target (soft)", false, Box::new(netinf_reference)),
        ("Centrality oracle", true, Box::new(|| hard(centrality_oracle))),
        ("Innovativeness bounds and monotonicity", true, Box::new(|| hard(innovativeness))),
        ("Imputation golden tests", true, Box::new(|| hard(imputation))),
        ("Quartile binning", true, Box::new(|| hard(quartiles))),
        ("API determinism", true, Box::new(|| hard(api_determinism))),
    ];
    let mut hard_failures = 0;
    for (name, is_hard, run) in &criteria {
        match run() {
            Outcome::Pass(d) => println!("PASS     {name}: {d}"),
            Outcome::Fail(d) => {
                println!("FAIL     {name}: {d}");
                if *is_hard {
                    hard_failures += 1;
                }
            }
            Outcome::NotRun(d) => println!("NOT RUN  {name}: {d}"),
        }
    }
    if hard_failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
