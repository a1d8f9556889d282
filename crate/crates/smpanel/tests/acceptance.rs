//! Acceptance checks, one line per criterion. Run with
//! `cargo test --release --test acceptance`; exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use smpanel::functional::{self, Functional, FunctionalSet, PathStat};
use smpanel::inference;
use smpanel::markov::{self, MarkovSurrogate};
use smpanel::mcem::{self, McemConfig, PathPool, RunOptions};
use smpanel::model::{Baseline, Hazard, SemiMarkovModel};
use smpanel::path::SamplePath;
use smpanel::rng::{self, SimRng};
use smpanel::sampler::{self, ProposalContext};
use smpanel::scenario::{self, Scenario};
use smpanel::spline::BSplineBasis;
use smpanel::state::{StateSet, StateSpace};
use smpanel::{psis, Covariates, Subject};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn subjects_of(sc: &Scenario, n: usize, seed: u64) -> Vec<Subject> {
    sc.simulate(n, seed).unwrap().into_iter().map(|s| s.subject).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sc = scenario::lookup("exp_illness_death").unwrap();
    let subjects = subjects_of(&sc, 500, 2024);
    let model = sc.model.clone();
    let direct = markov::fit_markov_mle(&model, &subjects, None).unwrap();
    let d = inference::summarize_direct(&direct, &subjects).unwrap();
    let fit = mcem::run_mcem(&model, &direct.surrogate, &subjects, &McemConfig::default(), RunOptions::default()).unwrap();
    let m = inference::summarize_mcem(&model, &fit, &direct.surrogate).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (sd, sm) = match (&d.se, &m.se) {
        (Some(a), Some(b)) => (a.clone(), b.clone()),
        _ => return outcome(false, "information matrix not positive definite".into()),
    };
    let mut worst: f64 = 0.0;
    for j in 0..d.theta.len() {
        let tol = (2.0 * (sd[j] * sd[j] + sm[j] * sm[j]).sqrt()).max(1e-3);
        worst = worst.max((d.theta[j] - m.theta[j]).abs() / tol);
    }
    let ll_gap = (d.loglik - m.loglik).abs();
    let ll_ok = ll_gap <= 2.0 * m.loglik_se;
    let pass = worst <= 1.0 && ll_ok && secs <= 300.0;
    outcome(
        pass,
        format!(
            "max |dtheta|/tol {worst:.3}; loglik direct {:.4} mcem {:.4} (gap {ll_gap:.2e}, 2 MC SE {:.2e}); {} MCEM iterations; {secs:.1}s",
            d.loglik,
            m.loglik,
            2.0 * m.loglik_se,
            fit.trace.len()
        ),
    )
}

/// A random snapshot subject on a random generator with at most 4 states
/// and 5 records, with a non-zero likelihood.
fn random_instance(r: &mut SimRng) -> (StateSpace, Vec<f64>, Subject) {
    loop {
        let k = r.random_range(2..=4usize);
        let mut edges = Vec::new();
        for a in 1..=k {
            for b in 1..=k {
                if a != b && r.random_bool(0.5) {
                    edges.push((a, b));
                }
            }
        }
        if edges.is_empty() {
            continue;
        }
        let Ok(space) = StateSpace::numbered(k, &edges) else { continue };
        let rates: Vec<f64> = edges.iter().map(|_| r.random_range(0.2..1.5)).collect();
        let n_rec = r.random_range(1..=5usize);
        let mut t = 0.0;
        let mut from = s(0);
        let mut records = Vec::new();
        for _ in 0..n_rec {
            let dt = r.random_range(0.2..1.0);
            let to = if r.random_bool(0.5) {
                s(r.random_range(0..k))
            } else {
                let set = StateSet::from_states((0..k).filter(|_| r.random_bool(0.5)));
                if set.is_empty() { StateSet::all(k) } else { set }
            };
            records.push(snapshot(t, t + dt, from, to));
            t += dt;
            from = to;
        }
        let sub = subject("inst", records);
        let q = generator(&space, &rates);
        if enumerate_likelihood(&q, &sub) > 1e-6 {
            return (space, rates, sub);
        }
    }
}

fn criterion_2() -> Outcome {
    const DRAWS: usize = 100_000;
    const INSTANCES: usize = 12;
    let mut gen = rng::stream(2, rng::domain::SIMULATE, 0);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut used = 0;
    while used < INSTANCES {
        let (space, rates, sub) = random_instance(&mut gen);
        let q = generator(&space, &rates);
        let truth = skeleton_posterior(&q, &sub);
        // Expected TV of an exact sampler; instances above half the
        // tolerance are not resolvable at this draw count.
        let noise: f64 = truth
            .values()
            .map(|p| (2.0 * p * (1.0 - p) / (std::f64::consts::PI * DRAWS as f64)).sqrt())
            .sum::<f64>()
            / 2.0;
        if noise > 0.005 {
            skipped += 1;
            continue;
        }
        let surr = surrogate(space, &rates);
        let ctx = ProposalContext::new(&surr, &sub).unwrap();
        let mut r = rng::stream(2, rng::domain::PROPOSAL, used as u64);
        let mut counts: std::collections::HashMap<Vec<usize>, f64> = Default::default();
        for _ in 0..DRAWS {
            let (seq, _) = ctx.ffbs(&mut r);
            *counts.entry(seq).or_default() += 1.0 / DRAWS as f64;
        }
        let mut tv = 0.0;
        for (seq, p) in &truth {
            tv += (p - counts.get(seq).copied().unwrap_or(0.0)).abs();
        }
        tv += counts.iter().filter(|(k, _)| !truth.contains_key(*k)).map(|(_, v)| v).sum::<f64>();
        worst = worst.max(tv / 2.0);
        used += 1;
    }
    outcome(
        worst <= 0.01,
        format!("max TV {worst:.4} over {INSTANCES} random instances at {DRAWS} draws ({skipped} with support too wide for the draw count skipped)"),
    )
}

fn criterion_3() -> Outcome {
    const DRAWS: usize = 100_000;
    let mut gen = rng::stream(3, rng::domain::SIMULATE, 0);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for g in 0..3 {
        // Fully connected, so every endpoint pair is reachable.
        let mut q = DMatrix::zeros(3, 3);
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    q[(a, b)] = gen.random_range(0.2..2.0);
                    q[(a, a)] -= q[(a, b)];
                }
            }
        }
        let dt = gen.random_range(0.5..1.5);
        let full = rk4_expm(&q, dt, 4000);
        let half = rk4_expm(&q, dt / 2.0, 4000);
        for a in 0..3 {
            for b in 0..3 {
                let mut r = rng::stream(3, rng::domain::PROPOSAL, (g * 9 + a * 3 + b) as u64);
                let mut freq = [0.0; 3];
                for _ in 0..DRAWS {
                    let jumps = sampler::sample_interval(&q, a, b, dt, full[(a, b)], &mut r).unwrap();
                    let mid = jumps.iter().take_while(|j| j.0 <= dt / 2.0).last().map_or(a, |j| j.1);
                    freq[mid] += 1.0 / DRAWS as f64;
                }
                for (c, f) in freq.iter().enumerate() {
                    let expected = half[(a, c)] * half[(c, b)] / full[(a, b)];
                    worst = worst.max((f - expected).abs());
                }
                cases += 1;
            }
        }
    }
    outcome(
        worst <= 0.01,
        format!("max |deviation| {worst:.4} over {cases} endpoint pairs on 3 random generators at {DRAWS} draws"),
    )
}

const FOUR: [&str; 4] = ["rm_rfst", "rm_ttr_or_eof", "ttr_given_recurrence", "rm_ttd_given_recurrence"];

fn criterion_4() -> Outcome {
    const REPS: usize = 100;
    let start = Instant::now();
    let sc = scenario::lookup("illness_death").unwrap();
    let set = FunctionalSet {
        items: sc.functionals.items.iter().filter(|(n, _)| FOUR.contains(&n.as_str())).cloned().collect(),
        ..sc.functionals.clone()
    };
    let names: Vec<&str> = set.items.iter().map(|(n, _)| n.as_str()).collect();
    let truth: Vec<f64> = names.iter().map(|n| sc.truth(n).unwrap()).collect();
    let mut sums = [0.0; 4];
    let mut covered = [0usize; 4];
    let mut failures = Vec::new();
    let mut done = 0;
    for rep in 0..REPS {
        let subjects = subjects_of(&sc, 250, 40_000 + rep as u64);
        let run = || -> smpanel::Result<Vec<inference::FunctionalInterval>> {
            let direct = markov::fit_markov_mle(&sc.model.exponential_analogue(), &subjects, None)?;
            let cfg = McemConfig { seed: rep as u64, ..McemConfig::default() };
            let fit = mcem::run_mcem(&sc.model, &direct.surrogate, &subjects, &cfg, RunOptions::default())?;
            let est = inference::summarize_mcem(&sc.model, &fit, &direct.surrogate)?;
            let cov = est
                .covariance_matrix()
                .ok_or_else(|| smpanel::Error::Numerical("information not positive definite".into()))?;
            inference::mc_functional_ci(&sc.model, &fit.theta, &cov, &set, 200, 4000, 0.95, rep as u64)
        };
        match run() {
            Ok(ci) => {
                for (j, c) in ci.iter().enumerate() {
                    sums[j] += c.estimate.unwrap();
                    if c.lower.unwrap() <= truth[j] && truth[j] <= c.upper.unwrap() {
                        covered[j] += 1;
                    }
                }
                done += 1;
            }
            Err(e) => failures.push(format!("replicate {rep}: {e}")),
        }
    }
    let mut pass = failures.is_empty();
    let mut parts = Vec::new();
    for j in 0..4 {
        let bias = sums[j] / done as f64 / truth[j] - 1.0;
        let cover = covered[j] as f64 / REPS as f64;
        pass &= bias.abs() <= 0.03 && (0.89..=0.99).contains(&cover);
        parts.push(format!("{} bias {:+.4} coverage {:.2}", names[j], bias, cover));
    }
    if !failures.is_empty() {
        parts.push(format!("{} failed fits, first: {}", failures.len(), failures[0]));
    }
    parts.push(format!("{:.0}s", start.elapsed().as_secs_f64()));
    outcome(pass, parts.join("; "))
}

/// Estimate and Monte Carlo standard error of a path statistic.
fn stat_se(stat: &PathStat, paths: &[SamplePath], horizon: f64) -> (f64, f64, usize) {
    let values: Vec<f64> = match stat {
        PathStat::Prob(e) => paths.iter().map(|p| f64::from(u8::from(e.holds(p, horizon)))).collect(),
        PathStat::CondProb { event, given } => paths
            .iter()
            .filter(|p| given.holds(p, horizon))
            .map(|p| f64::from(u8::from(event.holds(p, horizon))))
            .collect(),
        PathStat::Mean(v) => paths.iter().map(|p| v.value(p, horizon)).collect(),
        PathStat::CondMean { value, given } => paths
            .iter()
            .filter(|p| given.holds(p, horizon))
            .map(|p| value.value(p, horizon))
            .collect(),
    };
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt(), values.len())
}

fn criterion_5() -> Outcome {
    const N: usize = 100_000;
    let mut pass = true;
    let mut parts = Vec::new();
    let sc = scenario::lookup("illness_death").unwrap();
    let paths = functional::simulate_profiles(&sc.model, &sc.theta, &sc.functionals, N, 5).unwrap();
    let mut worst: f64 = 0.0;
    for (name, f) in &sc.functionals.items {
        let Functional::Stat { stat, profile } = f else { unreachable!("illness-death functionals are plain statistics") };
        let (est, se, _) = stat_se(stat, &paths[profile], sc.functionals.horizon);
        let z = (est - sc.truth(name).unwrap()).abs() / se;
        worst = worst.max(z);
        pass &= z <= 3.0;
    }
    parts.push(format!("illness-death: 8 values, max |z| {worst:.2}"));

    let t9 = scenario::lookup("trial9").unwrap();
    let paths = functional::simulate_profiles(&t9.model, &t9.theta, &t9.functionals, N, 5).unwrap();
    let infected = |arm: &str| {
        let Some((_, Functional::Stat { stat, .. })) = t9.functionals.items.iter().find(|(n, _)| n == &format!("pr_infec_{arm}"))
        else {
            unreachable!("trial9 defines infection probabilities")
        };
        stat_se(stat, &paths[arm], t9.functionals.horizon)
    };
    let (pp, sp, _) = infected("placebo");
    let (pm, sm, _) = infected("mab");
    let pe = 1.0 - pm / pp;
    let se_pe = ((sm / pp).powi(2) + (pm * sp / (pp * pp)).powi(2)).sqrt();
    let z_pe = (pe - t9.truth("pe_infec").unwrap()).abs() / se_pe;
    let z_pp = (pp - t9.truth("pr_infec_placebo").unwrap()).abs() / sp;
    pass &= z_pe <= 3.0 && z_pp <= 3.0;
    parts.push(format!("trial9: pe_infec {pe:.4} (|z| {z_pe:.2}), pr_infec_placebo {pp:.4} (|z| {z_pp:.2})"));
    outcome(pass, parts.join("; "))
}

fn criterion_6() -> Outcome {
    const M: usize = 200;
    let sc = scenario::lookup("illness_death_panel5").unwrap();
    let subjects = subjects_of(&sc, 500, 6);
    let surr = markov::fit_markov_mle(&sc.model.exponential_analogue(), &subjects, None).unwrap().surrogate;
    let mut ess_ratio = 0.0;
    let (mut accepted, mut attempts) = (0usize, 0usize);
    for (i, sub) in subjects.iter().enumerate() {
        let ctx = ProposalContext::new(&surr, sub).unwrap();
        let design = sc.model.design(&sub.covariates).unwrap();
        let eval = sc.model.evaluator(&sc.theta, &design);
        let mut r = rng::stream(6, rng::domain::PROPOSAL, i as u64);
        let lw: Vec<f64> = (0..M)
            .map(|_| {
                let p = ctx.propose(&mut r).unwrap();
                eval.path_loglik(&p.path) - p.log_h
            })
            .collect();
        ess_ratio += psis::ess(&psis::normalize(&lw)) / M as f64;
        let mut r = rng::stream(6, rng::domain::REJECTION, i as u64);
        let out = sampler::rejection_sample_path(&sc.model, &sc.theta, sub, &mut r, 1_000_000).unwrap();
        attempts += out.attempts;
        accepted += usize::from(out.path.is_some());
    }
    let ess = ess_ratio / subjects.len() as f64;
    let acc = accepted as f64 / attempts as f64;
    let ratio = ess / acc;
    outcome(
        ess >= 0.5 && acc <= 0.05 && ratio >= 10.0,
        format!(
            "ESS/M {ess:.3}; rejection acceptance {acc:.4} ({accepted}/{attempts}); efficiency ratio {ratio:.1}; {} subjects",
            subjects.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let sc = scenario::lookup("weibull_shape25").unwrap();
    let subjects = subjects_of(&sc, 1000, 9);
    let exp = sc.model.exponential_analogue();
    let markov_fit = markov::fit_markov_mle(&exp, &subjects, None).unwrap();
    let markov_est = inference::summarize_direct(&markov_fit, &subjects).unwrap();

    let cox = markov::coxian_expansion(&exp, 0, 1, 2).unwrap();
    let latent: Vec<Subject> = subjects.iter().map(|s| cox.latent_subject(s)).collect();
    let init = cox.init_from_markov(&exp, markov_fit.surrogate.theta());
    let cox_fit = markov::fit_markov_mle(&cox.latent, &latent, Some(&init)).unwrap();
    let cox_est = inference::summarize_direct(&cox_fit, &latent).unwrap();

    let basis = BSplineBasis::new(1, vec![1.0], 0.0, 2.0).unwrap();
    let spline = scenario::illness_death_model([Baseline::BSpline(basis), Baseline::Exponential, Baseline::Exponential]);
    let fit = mcem::run_mcem(&spline, &markov_fit.surrogate, &subjects, &McemConfig::default(), RunOptions::default()).unwrap();
    let sp = inference::summarize_mcem(&spline, &fit, &markov_fit.surrogate).unwrap();

    let d_markov = sp.aic - markov_est.aic;
    let d_cox = sp.aic - cox_est.aic;
    let se = |o: &inference::Estimates| (sp.aic_se.powi(2) + o.aic_se.powi(2)).sqrt();
    let pass = d_markov < 0.0 && d_cox < 0.0 && -d_markov > 2.0 * se(&markov_est) && -d_cox > 2.0 * se(&cox_est);
    outcome(
        pass,
        format!(
            "AIC spline {:.1} (MC SE {:.2}), Markov {:.1}, Coxian {:.1}; dAIC vs Markov {d_markov:.1}, vs Coxian {d_cox:.1}",
            sp.aic, sp.aic_se, markov_est.aic, cox_est.aic
        ),
    )
}

fn family_model(baseline: Baseline) -> SemiMarkovModel {
    SemiMarkovModel::new(illness_death_space(), vec![Hazard::new(baseline, &["x"]); 3]).unwrap()
}

fn random_path(r: &mut SimRng) -> SamplePath {
    let mut p = SamplePath::constant(0, 0.0, 2.5);
    let t1 = r.random_range(0.05..1.2);
    match r.random_range(0..4) {
        0 => {}
        1 => p.push(t1, 2),
        2 => p.push(t1, 1),
        _ => {
            p.push(t1, 1);
            p.push(t1 + r.random_range(0.05..1.2), 2);
        }
    }
    p
}

fn criterion_8() -> Outcome {
    let mut r = rng::stream(8, rng::domain::SIMULATE, 0);
    let mut failures: Vec<String> = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok && !failures.iter().any(|f| f == what) {
            failures.push(what.to_string());
        }
    };

    for _ in 0..200 {
        let n = r.random_range(25..300);
        let lw: Vec<f64> = (0..n).map(|_| r.random_range(-15.0..5.0)).collect();
        let w = psis::normalize(&lw);
        check((w.iter().sum::<f64>() - 1.0).abs() < 1e-12, "weight normalization");
        let e = psis::ess(&w);
        check(e >= 1.0 - 1e-9 && e <= n as f64 + 1e-9, "ESS bounds");
        let mut sm = lw.clone();
        psis::pareto_smooth(&mut sm);
        let e = psis::ess(&psis::normalize(&sm));
        check(e >= 1.0 - 1e-9 && e <= n as f64 + 1e-9, "ESS bounds");
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        check(idx.windows(2).all(|w| sm[w[0]] <= sm[w[1]]), "smoothing order");
    }

    for _ in 0..200 {
        let rates: Vec<f64> = (0..3).map(|_| r.random_range(0.1..2.0)).collect();
        let surr = surrogate(illness_death_space(), &rates);
        let a = r.random_range(0.1..1.0);
        let b = a + r.random_range(0.2..2.0);
        let m = r.random_range(a + 0.01..b - 0.01);
        let to = s(r.random_range(0..3));
        let plain = subject("p", vec![snapshot(0.0, a, s(0), s(0)), snapshot(a, b, s(0), to)]);
        let split = subject(
            "q",
            vec![snapshot(0.0, a, s(0), s(0)), snapshot(a, m, s(0), StateSet::all(3)), snapshot(m, b, StateSet::all(3), to)],
        );
        let (l0, l1) = (surr.subject_loglik(&plain).unwrap(), surr.subject_loglik(&split).unwrap());
        check((l0 - l1).abs() < 1e-10 * l0.abs().max(1.0), "Chapman-Kolmogorov insertion");
    }

    let spline = Baseline::BSpline(BSplineBasis::new(3, vec![0.6, 1.2], 0.0, 2.5).unwrap());
    for baseline in [Baseline::Exponential, Baseline::Weibull, spline] {
        let model = family_model(baseline);
        let p = model.n_params();
        for _ in 0..50 {
            let theta: Vec<f64> = (0..p).map(|_| r.random_range(-0.8..0.8)).collect();
            let cov: Covariates = [("x".to_string(), r.random_range(-1.0..1.0))].into_iter().collect();
            let design = model.design(&cov).unwrap();
            let path = random_path(&mut r);
            let ll = |t: &[f64]| model.evaluator(t, &design).path_loglik(&path);
            let mut g = vec![0.0; p];
            model.evaluator(&theta, &design).accumulate_derivatives(&path, 1.0, &mut g, None);
            for j in 0..p {
                let h = 1e-5;
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[j] += h;
                dn[j] -= h;
                let fd = (ll(&up) - ll(&dn)) / (2.0 * h);
                check((g[j] - fd).abs() <= 1e-5 * g[j].abs().max(fd.abs()).max(1.0), "gradient vs finite differences");
            }
            let eval = model.evaluator(&theta, &design);
            let t0 = r.random_range(0.05..2.0);
            let t1 = t0 + r.random_range(0.01..2.0);
            for h in 0..3 {
                let exact = eval.cumhaz(h, t0, t1);
                let quad = integrate(&|u: f64| eval.intensity(h, u), t0, t1, 1e-14 * exact.max(1e-3));
                check((exact - quad).abs() <= 1e-7 * quad.abs(), "cumulative hazard vs quadrature");
            }
        }
    }

    let sc = scenario::lookup("illness_death").unwrap();
    for seed in [1u64, 77, 123_456] {
        let bytes = |s: u64| {
            let mut out = Vec::new();
            smpanel::io::write_panel(&mut out, &subjects_of(&sc, 200, s)).unwrap();
            out
        };
        check(bytes(seed) == bytes(seed), "seed determinism");
    }
    let subjects = subjects_of(&sc, 60, 3);
    let surr = markov::fit_markov_mle(&sc.model.exponential_analogue(), &subjects, None).unwrap().surrogate;
    let traces: Vec<String> = (0..2)
        .map(|_| {
            let f = mcem::run_mcem(&sc.model, &surr, &subjects, &McemConfig::default(), RunOptions::default()).unwrap();
            serde_json::to_string(&f.trace).unwrap()
        })
        .collect();
    check(traces[0] == traces[1], "seed determinism");

    let exp = scenario::lookup("exp_illness_death").unwrap();
    for k in 0..10u64 {
        let subjects = subjects_of(&exp, 40, 100 + k);
        let theta: Vec<f64> = (0..3).map(|_| r.random_range(0.2f64..1.5).ln()).collect();
        let surr = MarkovSurrogate::new(exp.model.clone(), theta.clone()).unwrap();
        let mut pool = PathPool::new(&exp.model, &surr, &subjects, 10.0, k, true).unwrap();
        pool.reweight(&exp.model, &theta, 10.0).unwrap();
        let (ll, se) = inference::marginal_loglik(&pool);
        let exact = surr.marginal_loglik(&subjects).unwrap();
        check((ll - exact).abs() < 1e-9 * exact.abs() && se < 1e-12, "zero-variance identity");
    }

    let pass = failures.is_empty();
    outcome(
        pass,
        if pass {
            "normalization, ESS bounds, smoothing order, CK insertion, gradients (150 points), cumulative hazards, determinism, zero-variance identity".into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn main() {
    // Ignore libtest flags such as `--nocapture` passed through `cargo test`.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failed = 0;
    let mut summary = BTreeMap::new();
    for (n, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n}: {verdict} ({:.1}s) {}", start.elapsed().as_secs_f64(), o.detail);
        failed += usize::from(!o.pass);
        summary.insert(n, o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", summary.values().filter(|p| **p).count());
    if failed > 0 {
        std::process::exit(1);
    }
}
