use diffusion_core::ingest::StateCode;
use diffusion_core::survival::{fit_cox, CoxOptions, PersonPeriodRow, PersonPeriodTable, RiskSets, TieMethod};
use diffusion_testkit::cox::{
    brute_force_maximize, efron_log_likelihood, generate, single_covariate_root, to_table, Row,
};
use diffusion_testkit::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn risk_sets(rows: &[Row], ties: TieMethod) -> RiskSets {
    let p = rows[0].x.len();
    let x = DMatrix::from_fn(rows.len(), p, |r, c| rows[r].x[c]);
    let times: Vec<i64> = rows.iter().map(|r| i64::from(r.time)).collect();
    let events: Vec<bool> = rows.iter().map(|r| r.event).collect();
    RiskSets::new(&times, &x, &events, ties)
}

fn synthetic(seed: u64, p: usize) -> Vec<Row> {
    let beta = [0.5, -0.3, 0.2];
    let mut r = rng(seed);
    loop {
        let rows = generate(&mut r, 20, 5, &beta[..p], 0.15);
        let events = rows.iter().filter(|r| r.event).count();
        if rows.len() <= 100 && events >= 4 {
            return rows;
        }
    }
}

#[test]
fn efron_matches_independent_likelihood() {
    for seed in 0..5 {
        let rows = synthetic(seed, 3);
        let rs = risk_sets(&rows, TieMethod::Efron);
        let beta = [0.3, -0.7, 1.1];
        let got = rs.evaluate(&DVector::from_row_slice(&beta)).log_likelihood;
        let want = efron_log_likelihood(&rows, &beta);
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn fit_matches_brute_force_maximizer() {
    for seed in 0..4 {
        let p = 2 + (seed as usize % 2);
        let rows = synthetic(100 + seed, p);
        let names = ["a", "b", "c"];
        let fit = fit_cox(&to_table(&rows, &names[..p]), &CoxOptions::default()).unwrap();
        assert!(fit.converged, "seed {seed}");
        let oracle = brute_force_maximize(&rows, p);
        for (got, want) in fit.coefficients().iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-4, "seed {seed}: {got} vs {want}");
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(55);
    for seed in 0..5 {
        let rows = synthetic(200 + seed, 3);
        for ties in [TieMethod::Efron, TieMethod::Breslow] {
            let rs = risk_sets(&rows, ties);
            for _ in 0..5 {
                let beta: Vec<f64> = (0..3).map(|_| r.random_range(-1.5..1.5)).collect();
                let eval = rs.evaluate(&DVector::from_row_slice(&beta));
                let h = 1e-5;
                for k in 0..3 {
                    let mut up = beta.clone();
                    let mut down = beta.clone();
                    up[k] += h;
                    down[k] -= h;
                    let fd = (rs.evaluate(&DVector::from_row_slice(&up)).log_likelihood
                        - rs.evaluate(&DVector::from_row_slice(&down)).log_likelihood)
                        / (2.0 * h);
                    let g = eval.gradient[k];
                    assert!((g - fd).abs() <= 1e-6 * fd.abs().max(1.0), "component {k}: {g} vs {fd}");
                    // Hessian column against differences of the analytic gradient.
                    let gu = rs.evaluate(&DVector::from_row_slice(&up)).gradient;
                    let gd = rs.evaluate(&DVector::from_row_slice(&down)).gradient;
                    for j in 0..3 {
                        let fdh = (gu[j] - gd[j]) / (2.0 * h);
                        assert!((eval.hessian[(j, k)] - fdh).abs() <= 1e-5 * fdh.abs().max(1.0));
                    }
                }
            }
        }
    }
}

#[test]
fn column_scaling_rescales_only_its_coefficient() {
    let rows = synthetic(300, 3);
    let base = fit_cox(&to_table(&rows, &["a", "b", "c"]), &CoxOptions::default()).unwrap();
    for c in [0.01, 3.0, 250.0] {
        let scaled: Vec<Row> = rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.x[1] *= c;
                r
            })
            .collect();
        let fit = fit_cox(&to_table(&scaled, &["a", "b", "c"]), &CoxOptions::default()).unwrap();
        let (b0, b1) = (&base.factors, &fit.factors);
        assert!((b1[1].coefficient * c - b0[1].coefficient).abs() < 1e-6);
        assert!((b1[1].z.unwrap() - b0[1].z.unwrap()).abs() < 1e-6);
        assert!((b1[1].p_value.unwrap() - b0[1].p_value.unwrap()).abs() < 1e-6);
        for k in [0, 2] {
            assert!((b1[k].coefficient - b0[k].coefficient).abs() < 1e-6);
            assert!((b1[k].std_error.unwrap() - b0[k].std_error.unwrap()).abs() < 1e-6);
        }
    }
}

#[test]
fn single_binary_covariate_matches_score_root() {
    let mut r = rng(9);
    for trial in 0..5 {
        // Distinct event years; a few censored at the end.
        let n = 14;
        let subjects: Vec<(i32, f64, bool)> = (0..n)
            .map(|i| {
                let x = if r.random::<bool>() { 1.0 } else { 0.0 };
                let censored = i >= n - 3;
                (if censored { n - 3 } else { i + 1 }, x, !censored)
            })
            .collect();
        if subjects.iter().filter(|s| s.2).all(|s| s.1 == subjects[0].1) {
            continue;
        }
        let mut rows = Vec::new();
        for (s, &(stop, x, event)) in subjects.iter().enumerate() {
            for y in 1..=stop {
                rows.push(PersonPeriodRow {
                    state: StateCode::from_index(s).unwrap(),
                    year: y,
                    covariates: vec![x],
                    event: event && y == stop,
                });
            }
        }
        let table = PersonPeriodTable { policy_id: format!("bin{trial}"), factors: vec!["x".into()], rows };
        let fit = fit_cox(&table, &CoxOptions::default()).unwrap();
        let root = single_covariate_root(&subjects);
        assert!((fit.factors[0].coefficient - root).abs() < 1e-6, "{} vs {root}", fit.factors[0].coefficient);
    }
}

#[test]
fn newton_history_is_monotone() {
    for seed in 0..10 {
        let rows = synthetic(400 + seed, 3);
        let fit = fit_cox(&to_table(&rows, &["a", "b", "c"]), &CoxOptions::default()).unwrap();
        assert!(fit.log_likelihood_history.windows(2).all(|w| w[1] >= w[0]));
        for f in &fit.factors {
            assert_eq!(f.hazard_ratio.to_bits(), f.coefficient.exp().to_bits());
        }
    }
}
