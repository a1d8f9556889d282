//! Post-fit inference: observed information, the importance-sampling
//! marginal likelihood, information criteria with Monte Carlo error,
//! Bayesian bootstrap refits and simulation-based intervals for path
//! functionals.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Subject;
use crate::error::{Error, Result};
use crate::functional::{self, FunctionalSet};
use crate::markov::{self, MarkovFit, MarkovSurrogate};
use crate::mcem::{self, McemConfig, McemFit, PathPool, Quantiles, RunOptions};
use crate::model::SemiMarkovModel;
use crate::par;
use crate::rng;

/// Eigenvalue threshold below which the information matrix is reported as
/// not positive definite.
pub const PD_THRESHOLD: f64 = 1e-10;

/// Largest tolerated share of failed bootstrap replicates.
pub const MAX_BOOTSTRAP_FAILURE: f64 = 0.10;

/// Louis observed information at `theta`, from the weighted paths of `pool`.
///
/// Per subject this is `sum_m w_m (-H_m - g_m g_m') + gbar gbar'` with `g`
/// and `H` the complete-data score and Hessian of each path.
pub fn observed_information(pool: &PathPool, model: &SemiMarkovModel, theta: &[f64]) -> Result<DMatrix<f64>> {
    let p = model.n_params();
    let parts = par::map_indexed(pool.len(), |i| {
        let bw = pool.subject_weights[i];
        let mut info = DMatrix::zeros(p, p);
        if bw == 0.0 {
            return info;
        }
        let (grads, hessians) = mcem::weighted_score_and_hessian(pool, model, theta, i);
        let w = &pool.subjects[i].weights;
        let mut gbar = nalgebra::DVector::zeros(p);
        for ((g, h), &wm) in grads.iter().zip(&hessians).zip(w) {
            let g = nalgebra::DVector::from_column_slice(g);
            info -= (h + &g * g.transpose()) * wm;
            gbar += g * wm;
        }
        info += &gbar * gbar.transpose();
        info * bw
    });
    let mut total = DMatrix::zeros(p, p);
    for m in parts {
        total += m;
    }
    check_finite(&total, model)?;
    Ok(total)
}

fn check_finite(info: &DMatrix<f64>, model: &SemiMarkovModel) -> Result<()> {
    let names = model.param_names();
    for i in 0..info.nrows() {
        if (0..info.ncols()).any(|j| !info[(i, j)].is_finite()) {
            return Err(Error::Numerical(format!(
                "information matrix has non-finite entries for parameter {}",
                names[i]
            )));
        }
    }
    Ok(())
}

/// Inverse information, or `None` when an eigenvalue falls below
/// [`PD_THRESHOLD`].
pub fn covariance(info: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (info + info.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l >= PD_THRESHOLD)) {
        return None;
    }
    let inv = eig.eigenvectors.clone()
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
        * eig.eigenvectors.transpose();
    Some((&inv + inv.transpose()) * 0.5)
}

/// Importance-sampling estimate of the observed-data log-likelihood with
/// its Monte Carlo standard error, from unsmoothed weights.
pub fn marginal_loglik(pool: &PathPool) -> (f64, f64) {
    let parts = par::map_indexed(pool.len(), |i| {
        let sp = &pool.subjects[i];
        let bw = pool.subject_weights[i];
        let lw = sp.raw_log_weights();
        let m = lw.len() as f64;
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let v: Vec<f64> = lw.iter().map(|x| (x - max).exp()).collect();
        let mean = v.iter().sum::<f64>() / m;
        let var = if lw.len() > 1 {
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        let ll = sp.log_r + max + mean.ln();
        // Delta method for the log of a sample mean.
        let var_log = var / (m * mean * mean);
        (bw * ll, bw * bw * var_log)
    });
    let ll = parts.iter().map(|p| p.0).sum();
    let var: f64 = parts.iter().map(|p| p.1).sum();
    (ll, var.sqrt())
}

pub fn aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

pub fn bic(loglik: f64, n_params: usize, n_subjects: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n_subjects as f64).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Exact Markov likelihood maximised directly.
    Direct,
    Mcem,
}

/// Everything reported about a fitted model apart from its configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub method: Method,
    pub names: Vec<String>,
    /// Unconstrained parameters.
    pub theta: Vec<f64>,
    /// Parameters on their natural (exponentiated) scale; covariate effects are unchanged.
    pub natural: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub non_pd: bool,
    pub loglik: f64,
    pub loglik_se: f64,
    pub aic: f64,
    pub aic_se: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_subjects: usize,
    /// Log rates of the Markov surrogate used for proposals.
    pub surrogate_theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub boundary: Vec<String>,
    pub ess: Option<Quantiles>,
    pub khat: Option<Quantiles>,
}

impl Estimates {
    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let c = self.covariance.as_ref()?;
        let p = c.len();
        Some(DMatrix::from_fn(p, p, |i, j| c[i][j]))
    }
}

fn assemble(
    model: &SemiMarkovModel,
    method: Method,
    theta: Vec<f64>,
    info: &DMatrix<f64>,
    loglik: (f64, f64),
    n_subjects: usize,
    surrogate_theta: Vec<f64>,
) -> Estimates {
    let cov = covariance(info);
    let p = model.n_params();
    Estimates {
        method,
        names: model.param_names(),
        natural: model.to_natural(&theta),
        se: cov.as_ref().map(|c| (0..p).map(|i| c[(i, i)].sqrt()).collect()),
        covariance: cov
            .as_ref()
            .map(|c| (0..p).map(|i| (0..p).map(|j| c[(i, j)]).collect()).collect()),
        non_pd: cov.is_none(),
        theta,
        loglik: loglik.0,
        loglik_se: loglik.1,
        aic: aic(loglik.0, p),
        aic_se: 2.0 * loglik.1,
        bic: bic(loglik.0, p, n_subjects),
        n_params: p,
        n_subjects,
        surrogate_theta,
        iterations: 0,
        converged: true,
        boundary: Vec::new(),
        ess: None,
        khat: None,
    }
}

/// Summary of a direct Markov fit; the Monte Carlo error is zero.
pub fn summarize_direct(fit: &MarkovFit, subjects: &[Subject]) -> Result<Estimates> {
    let model = fit.surrogate.model();
    let info = markov::markov_information(&fit.surrogate, subjects)?;
    let mut e = assemble(
        model,
        Method::Direct,
        fit.surrogate.theta().to_vec(),
        &info,
        (fit.loglik, 0.0),
        subjects.len(),
        fit.surrogate.theta().to_vec(),
    );
    e.iterations = fit.iterations;
    e.converged = fit.converged;
    e.boundary = fit.boundary.clone();
    Ok(e)
}

/// Summary of an MCEM fit.
pub fn summarize_mcem(model: &SemiMarkovModel, fit: &McemFit, surrogate: &MarkovSurrogate) -> Result<Estimates> {
    let info = observed_information(&fit.pool, model, &fit.theta)?;
    let ll = marginal_loglik(&fit.pool);
    let mut e = assemble(
        model,
        Method::Mcem,
        fit.theta.clone(),
        &info,
        ll,
        fit.pool.len(),
        surrogate.theta().to_vec(),
    );
    e.iterations = fit.trace.len();
    e.ess = Some(fit.pool.ess_summary());
    e.khat = fit.pool.khat_summary();
    Ok(e)
}

/// One fit entering a model comparison.
#[derive(Clone, Debug)]
pub struct Candidate<'a> {
    pub name: String,
    pub estimates: &'a Estimates,
    /// Fingerprint of the data the model was fitted to.
    pub data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub method: Method,
    pub n_params: usize,
    pub loglik: f64,
    pub loglik_se: f64,
    pub aic: f64,
    pub aic_se: f64,
    pub delta_aic: f64,
    pub delta_aic_se: f64,
    /// `|delta| < 2 se`: the ordering is not resolved by the simulation.
    pub indistinguishable: bool,
}

/// AIC table relative to the first directly fitted (Markov) candidate, or
/// to the first candidate if none was fitted directly. All fits must come
/// from the same data, and Monte Carlo fits from the same surrogate.
pub fn compare(candidates: &[Candidate<'_>]) -> Result<Vec<ComparisonRow>> {
    if candidates.len() < 2 {
        return Err(Error::Config("compare needs at least two fits".into()));
    }
    let first = &candidates[0];
    for c in &candidates[1..] {
        if c.data != first.data {
            return Err(Error::Config(format!(
                "fits '{}' and '{}' were computed from different data",
                first.name, c.name
            )));
        }
    }
    // Monte Carlo fits must share the proposal surrogate; direct fits have none.
    let mut mc = candidates.iter().filter(|c| c.estimates.method == Method::Mcem);
    if let Some(reference) = mc.next() {
        for c in mc {
            if !same_vector(&c.estimates.surrogate_theta, &reference.estimates.surrogate_theta) {
                return Err(Error::Config(format!(
                    "fits '{}' and '{}' use different Markov surrogates",
                    reference.name, c.name
                )));
            }
        }
    }
    let base = candidates
        .iter()
        .find(|c| c.estimates.method == Method::Direct)
        .unwrap_or(first)
        .estimates;
    Ok(candidates
        .iter()
        .map(|c| {
            let e = c.estimates;
            let delta = e.aic - base.aic;
            let se = (e.aic_se * e.aic_se + base.aic_se * base.aic_se).sqrt();
            let same = std::ptr::eq(e, base);
            ComparisonRow {
                name: c.name.clone(),
                method: e.method,
                n_params: e.n_params,
                loglik: e.loglik,
                loglik_se: e.loglik_se,
                aic: e.aic,
                aic_se: e.aic_se,
                delta_aic: delta,
                delta_aic_se: se,
                indistinguishable: !same && delta.abs() < 2.0 * se,
            }
        })
        .collect())
}

fn same_vector(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs()))
}

/// Flat Dirichlet weights drawn independently within each stratum and
/// scaled to sum to the stratum size.
pub fn dirichlet_weights(strata: &[usize], rng: &mut rng::SimRng) -> Vec<f64> {
    let mut w: Vec<f64> = strata.iter().map(|_| Exp1.sample(rng)).collect();
    let n_strata = strata.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; n_strata];
    let mut counts = vec![0usize; n_strata];
    for (&s, &v) in strata.iter().zip(&w) {
        sums[s] += v;
        counts[s] += 1;
    }
    for (v, &s) in w.iter_mut().zip(strata) {
        *v *= counts[s] as f64 / sums[s];
    }
    w
}

/// Maps stratum labels to dense indices in order of first appearance.
pub fn stratum_indices(labels: &[String]) -> Vec<usize> {
    let mut seen: Vec<&String> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| *s == l) {
            Some(i) => i,
            None => {
                seen.push(l);
                seen.len() - 1
            }
        })
        .collect()
}

/// What a bootstrap replicate refits.
pub enum Refit<'a> {
    Direct {
        fit: &'a MarkovFit,
    },
    Mcem {
        surrogate: &'a MarkovSurrogate,
        fit: &'a McemFit,
        config: &'a McemConfig,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub reps: usize,
    /// Parameter vectors of the successful replicates, in replicate order.
    pub draws: Vec<Vec<f64>>,
    pub failed: usize,
    pub failures: Vec<String>,
}

impl BootstrapResult {
    /// Percentile interval of parameter `j`.
    pub fn percentile_interval(&self, j: usize, level: f64) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.draws.iter().map(|d| d[j]).collect();
        percentile_interval(v, level)
    }

    /// Sample covariance of the draws.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let b = self.draws.len();
        if b < 2 {
            return None;
        }
        let p = self.draws[0].len();
        let mean: Vec<f64> = (0..p)
            .map(|j| self.draws.iter().map(|d| d[j]).sum::<f64>() / b as f64)
            .collect();
        Some(DMatrix::from_fn(p, p, |i, j| {
            self.draws
                .iter()
                .map(|d| (d[i] - mean[i]) * (d[j] - mean[j]))
                .sum::<f64>()
                / (b - 1) as f64
        }))
    }
}

/// Bayesian bootstrap: each replicate reweights subjects with stratified
/// flat Dirichlet weights and refits, warm-started at the original estimate.
pub fn bayesian_bootstrap(
    model: &SemiMarkovModel,
    subjects: &[Subject],
    refit: &Refit<'_>,
    reps: usize,
    strata: Option<&[String]>,
    seed: u64,
) -> Result<BootstrapResult> {
    if reps < 1 {
        return Err(Error::Config("B must be ≥ 1".into()));
    }
    let strata_idx = match strata {
        Some(l) if l.len() != subjects.len() => {
            return Err(Error::Config("one stratum label per subject is required".into()))
        }
        Some(l) => stratum_indices(l),
        None => vec![0; subjects.len()],
    };
    let mut draws = Vec::new();
    let mut failures = Vec::new();
    for b in 0..reps {
        let mut r = rng::stream(seed, rng::domain::BOOTSTRAP, b as u64);
        let w = dirichlet_weights(&strata_idx, &mut r);
        let out = match refit {
            Refit::Direct { fit } => markov::fit_markov_mle_weighted(
                model,
                subjects,
                Some(&w),
                Some(fit.surrogate.theta()),
            )
            .map(|f| f.surrogate.theta().to_vec()),
            Refit::Mcem { surrogate, fit, config } => mcem::run_mcem(
                model,
                surrogate,
                subjects,
                config,
                RunOptions {
                    init: Some(fit.theta.clone()),
                    subject_weights: Some(w),
                    pool: Some(fit.pool.clone()),
                },
            )
            .map(|f| f.theta),
        };
        match out {
            Ok(theta) => draws.push(theta),
            Err(e) => failures.push(format!("replicate {}: {e}", b + 1)),
        }
        if failures.len() as f64 > MAX_BOOTSTRAP_FAILURE * reps as f64 {
            return Err(Error::NonConvergence(format!(
                "{} of {reps} bootstrap replicates failed; first failure: {}",
                failures.len(),
                failures[0]
            )));
        }
    }
    Ok(BootstrapResult {
        reps,
        failed: failures.len(),
        draws,
        failures,
    })
}

/// Linear-interpolation sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed percentile interval at confidence `level`.
pub fn percentile_interval(mut v: Vec<f64>, level: f64) -> Option<(f64, f64)> {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    Some((quantile_sorted(&v, a), quantile_sorted(&v, 1.0 - a)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalInterval {
    pub name: String,
    pub estimate: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Parameter draws for which the functional was defined.
    pub n_defined: usize,
}

/// Intervals for functionals from parameter draws. Every draw reuses the
/// simulation seed, so identical draws give identical values.
pub fn functional_intervals(
    model: &SemiMarkovModel,
    theta_hat: &[f64],
    draws: &[Vec<f64>],
    set: &FunctionalSet,
    n_sim: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<FunctionalInterval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let point = functional::estimate_functionals(model, theta_hat, set, n_sim, seed)?;
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); point.len()];
    for d in draws {
        let est = functional::estimate_functionals(model, d, set, n_sim, seed)?;
        for (slot, (_, v)) in values.iter_mut().zip(est) {
            if let Some(v) = v {
                slot.push(v);
            }
        }
    }
    Ok(point
        .into_iter()
        .zip(values)
        .map(|((name, estimate), v)| {
            let n_defined = v.len();
            let ci = percentile_interval(v, level);
            FunctionalInterval {
                name,
                estimate,
                lower: ci.map(|c| c.0),
                upper: ci.map(|c| c.1),
                n_defined,
            }
        })
        .collect())
}

/// Draws `n_draws` parameter vectors from `N(theta_hat, cov)` on the
/// unconstrained scale. An all-zero covariance returns copies of `theta_hat`.
pub fn draw_parameters(theta_hat: &[f64], cov: &DMatrix<f64>, n_draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let p = theta_hat.len();
    if cov.nrows() != p || cov.ncols() != p {
        return Err(Error::Domain("covariance dimension does not match the parameters".into()));
    }
    if cov.iter().all(|&v| v == 0.0) {
        return Ok(vec![theta_hat.to_vec(); n_draws]);
    }
    let chol = nalgebra::Cholesky::new((cov + cov.transpose()) * 0.5)
        .ok_or_else(|| Error::Numerical("covariance matrix is not positive definite".into()))?;
    let l = chol.l();
    Ok((0..n_draws)
        .map(|d| {
            let mut r = rng::stream(seed, rng::domain::PARAM_DRAW, d as u64);
            let z = nalgebra::DVector::from_fn(p, |_, _| StandardNormal.sample(&mut r));
            let x = &l * z;
            theta_hat.iter().zip(x.iter()).map(|(t, e)| t + e).collect()
        })
        .collect())
}

/// Monte Carlo intervals for functionals under the asymptotic normal
/// approximation of the estimator.
#[allow(clippy::too_many_arguments)]
pub fn mc_functional_ci(
    model: &SemiMarkovModel,
    theta_hat: &[f64],
    cov: &DMatrix<f64>,
    set: &FunctionalSet,
    n_draws: usize,
    n_sim: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<FunctionalInterval>> {
    let draws = draw_parameters(theta_hat, cov, n_draws, seed)?;
    functional_intervals(model, theta_hat, &draws, set, n_sim, level, seed)
}
