mod common;

use std::collections::BTreeMap;

use common::*;
use nalgebra::DMatrix;
use smpanel::functional::{self, Functional, FunctionalSet};
use smpanel::inference::{self, Candidate, Method, Refit};
use smpanel::markov;
use smpanel::mcem::{self, McemConfig, PathPool, RunOptions};
use smpanel::model::{Baseline, Hazard, SemiMarkovModel};
use smpanel::rng;
use smpanel::scenario;
use smpanel::simulate::{self, CovariateDesign, Encoding, ObservationScheme};
use smpanel::state::StateSpace;
use smpanel::{Covariates, Error, Subject};

fn weibull_model(space: StateSpace) -> SemiMarkovModel {
    let n = space.n_transitions();
    SemiMarkovModel::new(space, vec![Hazard::new(Baseline::Weibull, &[]); n]).unwrap()
}

fn panel_scheme(visits: Vec<f64>) -> ObservationScheme {
    ObservationScheme {
        visits,
        jitter: None,
        exact: Vec::new(),
        epsilon: 1e-3,
        encoding: Encoding::Identity,
    }
}

fn two_state_panel(model: &SemiMarkovModel, theta: &[f64], n: usize, seed: u64) -> Vec<Subject> {
    let scheme = panel_scheme(vec![0.5, 1.0, 1.5, 2.0]);
    simulate::simulate_cohort(model, theta, &CovariateDesign::None, &scheme, n, seed)
        .unwrap()
        .into_iter()
        .map(|s| s.subject)
        .collect()
}

#[test]
fn louis_information_of_fully_observed_data_is_the_event_count() {
    let sc = scenario::lookup("exp_illness_death").unwrap();
    let space = sc.model.space().clone();
    let sims = sc.simulate(150, 21).unwrap();
    let subjects: Vec<Subject> = sims
        .iter()
        .map(|x| fully_observed(&x.subject.id, &x.path, 1.0, &space))
        .collect();
    let mut events = [0.0; 3];
    for x in &sims {
        for w in x.path.states.windows(2) {
            events[space.transition_index(w[0], w[1]).unwrap()] += 1.0;
        }
    }
    let model = exp_model(space);
    let fit = markov::fit_markov_mle(&model, &subjects, None).unwrap();
    let theta = fit.surrogate.theta().to_vec();
    let mut pool = PathPool::new(&model, &fit.surrogate, &subjects, 5.0, 1, true).unwrap();
    pool.reweight(&model, &theta, 10.0).unwrap();
    let info = inference::observed_information(&pool, &model, &theta).unwrap();
    for i in 0..3 {
        assert!((info[(i, i)] - events[i]).abs() < 1e-4 * events[i], "{} vs {}", info[(i, i)], events[i]);
        for j in 0..3 {
            if i != j {
                assert!(info[(i, j)].abs() < 1e-8);
            }
        }
    }
    let markov_info = markov::markov_information(&fit.surrogate, &subjects).unwrap();
    assert!((&info - &markov_info).abs().max() < 1e-4 * events[0]);
}

#[test]
fn marginal_likelihood_matches_quadrature() {
    let space = illness_death_space();
    let model = weibull_model(space.clone());
    let nat = [(0.8, 1.4), (0.3, 1.0), (0.6, 1.7)];
    let theta: Vec<f64> = nat.iter().flat_map(|&(a, b): &(f64, f64)| [a.ln(), b.ln()]).collect();
    let cum = |h: usize, t: f64| nat[h].0 * t.powf(nat[h].1);
    let haz = |h: usize, t: f64| nat[h].0 * nat[h].1 * t.powf(nat[h].1 - 1.0);
    let s0 = |t: f64| (-cum(0, t) - cum(1, t)).exp();
    let s1 = |t: f64| (-cum(2, t)).exp();
    // (a, b, outcome): known healthy at a, outcome observed at b.
    let cases = [(0.0, 0.7, 1), (0.3, 1.0, 2), (0.5, 1.2, 1), (0.0, 1.5, 2), (0.8, 1.1, 0)];
    let mut exact_ll = 0.0;
    let mut subjects = Vec::new();
    for (i, &(a, b, x)) in cases.iter().enumerate() {
        let p = match x {
            0 => s0(b),
            1 => integrate(&|u: f64| haz(0, u) * s0(u) * s1(b - u), a, b, 1e-12),
            _ => {
                integrate(&|u: f64| haz(0, u) * s0(u) * (1.0 - s1(b - u)), a, b, 1e-12)
                    + integrate(&|u: f64| haz(1, u) * s0(u), a, b, 1e-12)
            }
        };
        exact_ll += p.ln();
        let mut recs = Vec::new();
        if a > 0.0 {
            recs.push(snapshot(0.0, a, s(0), s(0)));
        }
        recs.push(snapshot(a, b, s(0), s(x)));
        subjects.push(subject(&format!("{i}"), recs));
    }
    let surr = surrogate(space, &[0.8, 0.3, 0.6]);
    let mut pool = PathPool::new(&model, &surr, &subjects, 2000.0, 5, false).unwrap();
    pool.reweight(&model, &theta, 100.0).unwrap();
    let (ll, se) = inference::marginal_loglik(&pool);
    assert!(se > 0.0);
    assert!((ll - exact_ll).abs() <= 3.0 * se, "{ll} +- {se} vs {exact_ll}");
}

#[test]
fn doubling_the_pool_halves_the_likelihood_variance() {
    let space = illness_death_space();
    let model = weibull_model(space.clone());
    let theta: Vec<f64> = [0.8f64, 1.4, 0.3, 1.0, 0.6, 1.7].iter().map(|v| v.ln()).collect();
    let surr = surrogate(space, &[0.8, 0.3, 0.6]);
    let subjects = vec![
        subject("a", vec![snapshot(0.0, 0.5, s(0), s(0)), snapshot(0.5, 1.0, s(0), s(1))]),
        subject("b", vec![snapshot(0.0, 1.0, s(0), s(2))]),
    ];
    let mean_var = |m: usize| {
        (0..100)
            .map(|rep| {
                let mut pool = PathPool::new(&model, &surr, &subjects, m as f64, 1000 + rep, false).unwrap();
                pool.reweight(&model, &theta, 1000.0).unwrap();
                // Trim to exactly `m` paths so the comparison is at fixed M.
                for sp in &mut pool.subjects {
                    sp.paths.truncate(m);
                    sp.log_h.truncate(m);
                    sp.log_f.truncate(m);
                }
                inference::marginal_loglik(&pool).1.powi(2)
            })
            .sum::<f64>()
            / 100.0
    };
    let ratio = mean_var(200) / mean_var(100);
    assert!((0.4..=0.6).contains(&ratio), "{ratio}");
}

#[test]
fn weibull_wald_intervals_cover_the_scale() {
    let sp = StateSpace::numbered(2, &[(1, 2)]).unwrap();
    let model = weibull_model(sp.clone());
    let truth = [0.6f64.ln(), 1.5f64.ln()];
    let exp = exp_model(sp);
    let reps = 200;
    let mut covered = 0;
    for rep in 0..reps {
        let subjects = two_state_panel(&model, &truth, 150, 500 + rep);
        let fit = markov::fit_markov_mle(&exp, &subjects, None).unwrap();
        let cfg = McemConfig { seed: rep, ..McemConfig::default() };
        let out = mcem::run_mcem(&model, &fit.surrogate, &subjects, &cfg, RunOptions::default()).unwrap();
        let est = inference::summarize_mcem(&model, &out, &fit.surrogate).unwrap();
        let se = est.se.expect("positive definite information")[0];
        if (est.theta[0] - truth[0]).abs() <= 1.959964 * se {
            covered += 1;
        }
    }
    let coverage = covered as f64 / reps as f64;
    assert!((0.90..=0.99).contains(&coverage), "{coverage}");
}

#[test]
fn bootstrap_needs_a_replicate() {
    let model = exp_model(StateSpace::numbered(2, &[(1, 2)]).unwrap());
    let subjects = two_state_panel(&model, &[0.7f64.ln()], 20, 1);
    let fit = markov::fit_markov_mle(&model, &subjects, None).unwrap();
    match inference::bayesian_bootstrap(&model, &subjects, &Refit::Direct { fit: &fit }, 0, None, 1) {
        Err(Error::Config(msg)) => assert_eq!(msg, "B must be ≥ 1"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unit_weights_reproduce_the_estimate() {
    let space = illness_death_space();
    let sc = scenario::lookup("illness_death").unwrap();
    let subjects: Vec<Subject> = sc.simulate(100, 3).unwrap().into_iter().map(|s| s.subject).collect();
    let ones = vec![1.0; subjects.len()];
    let exp = exp_model(space.clone());
    let fit = markov::fit_markov_mle(&exp, &subjects, None).unwrap();
    let again = markov::fit_markov_mle_weighted(&exp, &subjects, Some(&ones), Some(fit.surrogate.theta())).unwrap();
    for (a, b) in fit.surrogate.theta().iter().zip(again.surrogate.theta()) {
        assert!((a - b).abs() < 1e-6);
    }
    let model = weibull_model(space);
    let cfg = McemConfig::default();
    let out = mcem::run_mcem(&model, &fit.surrogate, &subjects, &cfg, RunOptions::default()).unwrap();
    let refit = mcem::run_mcem(
        &model,
        &fit.surrogate,
        &subjects,
        &cfg,
        RunOptions {
            init: Some(out.theta.clone()),
            subject_weights: Some(ones),
            pool: Some(out.pool.clone()),
        },
    )
    .unwrap();
    // The pool returned by a fit is topped up at the estimate, so a refit
    // takes one more Monte Carlo EM step: agreement is up to simulation
    // noise, a small fraction of the sampling standard error.
    let se = inference::summarize_mcem(&model, &out, &fit.surrogate).unwrap().se.unwrap();
    for ((a, b), se) in out.theta.iter().zip(&refit.theta).zip(se) {
        assert!((a - b).abs() < 0.25 * se, "{a} vs {b} (se {se})");
    }
}

#[test]
fn stratified_weights_sum_to_stratum_sizes() {
    let labels: Vec<String> = (0..37).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
    let idx = inference::stratum_indices(&labels);
    for b in 0..20 {
        let mut r = rng::stream(3, rng::domain::BOOTSTRAP, b);
        let w = inference::dirichlet_weights(&idx, &mut r);
        for k in 0..3 {
            let size = idx.iter().filter(|&&i| i == k).count() as f64;
            let sum: f64 = w.iter().zip(&idx).filter(|(_, &i)| i == k).map(|(w, _)| w).sum();
            assert!((sum - size).abs() < 1e-12);
        }
        assert!(w.iter().all(|&x| x > 0.0));
    }
}

#[test]
fn stratified_bootstrap_runs_end_to_end() {
    let model = exp_model(StateSpace::numbered(2, &[(1, 2)]).unwrap());
    let subjects = two_state_panel(&model, &[0.7f64.ln()], 40, 2);
    let fit = markov::fit_markov_mle(&model, &subjects, None).unwrap();
    let strata: Vec<String> = (0..40).map(|i| (i % 2).to_string()).collect();
    let res = inference::bayesian_bootstrap(&model, &subjects, &Refit::Direct { fit: &fit }, 25, Some(&strata), 4).unwrap();
    assert_eq!(res.draws.len(), 25);
    assert_eq!(res.failed, 0);
    let again = inference::bayesian_bootstrap(&model, &subjects, &Refit::Direct { fit: &fit }, 25, Some(&strata), 4).unwrap();
    assert_eq!(res, again);
    assert!(inference::bayesian_bootstrap(&model, &subjects, &Refit::Direct { fit: &fit }, 5, Some(&strata[..3]), 4).is_err());
}

#[test]
fn widespread_replicate_failure_is_fatal() {
    let sc = scenario::lookup("illness_death").unwrap();
    let subjects: Vec<Subject> = sc.simulate(60, 5).unwrap().into_iter().map(|s| s.subject).collect();
    let fit = markov::fit_markov_mle(&exp_model(illness_death_space()), &subjects, None).unwrap();
    let model = weibull_model(illness_death_space());
    let out = mcem::run_mcem(&model, &fit.surrogate, &subjects, &McemConfig::default(), RunOptions::default()).unwrap();
    let strict = McemConfig { max_iter: 1, tol: Some(1e-300), ..McemConfig::default() };
    let refit = Refit::Mcem {
        surrogate: &fit.surrogate,
        fit: &out,
        config: &strict,
    };
    match inference::bayesian_bootstrap(&model, &subjects, &refit, 5, None, 1) {
        Err(Error::NonConvergence(msg)) => assert!(msg.contains("bootstrap replicates failed"), "{msg}"),
        other => panic!("{:?}", other.map(|r| r.reps)),
    }
}

#[test]
fn bootstrap_percentile_intervals_cover_the_rate() {
    let model = exp_model(StateSpace::numbered(2, &[(1, 2)]).unwrap());
    let truth = 0.7f64.ln();
    let reps = 200;
    let mut covered = 0;
    for rep in 0..reps {
        let subjects = two_state_panel(&model, &[truth], 50, 10_000 + rep);
        let fit = markov::fit_markov_mle(&model, &subjects, None).unwrap();
        let boot = inference::bayesian_bootstrap(&model, &subjects, &Refit::Direct { fit: &fit }, 99, None, rep).unwrap();
        let (lo, hi) = boot.percentile_interval(0, 0.95).unwrap();
        if lo <= truth && truth <= hi {
            covered += 1;
        }
    }
    let coverage = covered as f64 / reps as f64;
    assert!((0.90..=0.99).contains(&coverage), "{coverage}");
}

fn two_state_functionals() -> FunctionalSet {
    use smpanel::functional::{Event, PathStat};
    FunctionalSet {
        horizon: 2.0,
        profiles: [("all".to_string(), Covariates::new())].into_iter().collect(),
        items: vec![
            ("pr_event".into(), Functional::stat(PathStat::Prob(Event::Ever(s(1))), "all")),
            ("constant".into(), Functional::Const(0.3)),
        ],
    }
}

#[test]
fn functional_intervals_collapse_without_parameter_uncertainty() {
    let model = exp_model(StateSpace::numbered(2, &[(1, 2)]).unwrap());
    let theta = [0.7f64.ln()];
    let set = two_state_functionals();
    let zero = DMatrix::zeros(1, 1);
    for ci in inference::mc_functional_ci(&model, &theta, &zero, &set, 50, 2000, 0.95, 3).unwrap() {
        assert_eq!(ci.lower, ci.estimate);
        assert_eq!(ci.upper, ci.estimate);
    }
    let cov = DMatrix::from_element(1, 1, 0.04);
    let out = inference::mc_functional_ci(&model, &theta, &cov, &set, 50, 2000, 0.95, 3).unwrap();
    let p = &out[0];
    assert!(p.lower.unwrap() < p.estimate.unwrap() && p.estimate.unwrap() < p.upper.unwrap());
    let c = &out[1];
    assert_eq!(c.upper.unwrap() - c.lower.unwrap(), 0.0);
    assert_eq!(c.estimate, Some(0.3));
    let bad = DMatrix::from_element(1, 1, -1.0);
    assert!(matches!(
        inference::mc_functional_ci(&model, &theta, &bad, &set, 5, 10, 0.95, 3),
        Err(Error::Numerical(_))
    ));
}

#[test]
fn protective_efficacy_is_one_minus_the_risk_ratio() {
    let sc = scenario::lookup("trial9").unwrap();
    let est: BTreeMap<String, Option<f64>> = functional::estimate_functionals(&sc.model, &sc.theta, &sc.functionals, 3000, 1)
        .unwrap()
        .into_iter()
        .collect();
    for kind in ["infec", "sympt", "asympt"] {
        let t = est[&format!("pr_{kind}_mab")].unwrap();
        let c = est[&format!("pr_{kind}_placebo")].unwrap();
        assert_eq!(est[&format!("pe_{kind}")].unwrap(), 1.0 - t / c);
    }
}

#[test]
fn no_infections_leave_conditionals_undefined() {
    let sc = scenario::lookup("trial9").unwrap();
    let mut theta = sc.theta.clone();
    theta[sc.model.base_range(0).start] = -1e3;
    let est: BTreeMap<String, Option<f64>> = functional::estimate_functionals(&sc.model, &theta, &sc.functionals, 500, 1)
        .unwrap()
        .into_iter()
        .collect();
    assert_eq!(est["pr_infec_placebo"], Some(0.0));
    assert_eq!(est["rm_pcr_placebo"], None);
    assert_eq!(est["pr_detected_mab"], None);
    assert_eq!(est["pe_infec"], None);
}

#[test]
fn seroconversion_ratios() {
    let [va, vs, v] = functional::seroconversion_two_stage(0.0, 50.0, 40.0, 100.0, 140.0);
    assert_eq!(va.value, Some(0.0));
    assert_eq!(vs.value, Some(0.5));
    assert!((v.value.unwrap() - 50.0 / 140.0).abs() < 1e-15);
    let over = functional::seroconversion_ratio(120.0, 100.0);
    assert!(over.exceeds_one);
    assert_eq!(functional::seroconversion_ratio(3.0, 0.0).value, None);
}

#[test]
fn model_comparison_table() {
    let sc = scenario::lookup("illness_death").unwrap();
    let subjects: Vec<Subject> = sc.simulate(150, 8).unwrap().into_iter().map(|s| s.subject).collect();
    let exp = exp_model(illness_death_space());
    let fit = markov::fit_markov_mle(&exp, &subjects, None).unwrap();
    let direct = inference::summarize_direct(&fit, &subjects).unwrap();
    assert_eq!(direct.method, Method::Direct);
    assert_eq!(direct.n_params, 3);
    assert_eq!(direct.aic_se, 0.0);
    let model = weibull_model(illness_death_space());
    let out = mcem::run_mcem(&model, &fit.surrogate, &subjects, &McemConfig::default(), RunOptions::default()).unwrap();
    let mc = inference::summarize_mcem(&model, &out, &fit.surrogate).unwrap();
    assert!(mc.aic_se > 0.0);
    let cand = |name: &str, e, data: &str| Candidate {
        name: name.into(),
        estimates: e,
        data: data.into(),
    };
    let rows = inference::compare(&[cand("weibull", &mc, "d"), cand("markov", &direct, "d")]).unwrap();
    assert_eq!(rows[1].delta_aic, 0.0);
    assert!(!rows[1].indistinguishable);
    assert_eq!(rows[0].delta_aic, mc.aic - direct.aic);
    assert_eq!(rows[0].delta_aic_se, mc.aic_se);
    assert!(matches!(inference::compare(&[cand("m", &direct, "d")]), Err(Error::Config(_))));
    assert!(inference::compare(&[cand("a", &mc, "d"), cand("b", &direct, "other")]).is_err());
    let mut other = mc.clone();
    other.surrogate_theta[0] += 0.1;
    assert!(inference::compare(&[cand("a", &mc, "d"), cand("b", &other, "d")]).is_err());
}
