//! Ascent-based Monte Carlo EM.
//!
//! Every subject keeps a pool of proposed paths with their surrogate
//! log-densities. An E-step recomputes target log-densities at the current
//! parameters, Pareto-smooths and normalises the importance weights, and
//! tops the pool up until its effective sample size reaches the subject's
//! target. The M-step maximises the weighted complete-data log-likelihood.
//! A step is accepted only when the gain in Q clears its Monte Carlo
//! noise; otherwise every target ESS is raised and the step retried.
//! Iteration ends at the first step whose upper confidence bound on the
//! gain falls below the tolerance, whether or not the gain was resolved.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Subject;
use crate::error::{Error, Result};
use crate::markov::MarkovSurrogate;
use crate::model::{Design, SemiMarkovModel};
use crate::optim::{self, BfgsOptions};
use crate::par;
use crate::path::SamplePath;
use crate::psis::{self, Khat};
use crate::rng::{self, SimRng};
use crate::sampler::ProposalContext;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McemConfig {
    /// Initial target ESS per subject.
    pub ess_target: f64,
    /// Factor applied to every target ESS when a step is not accepted.
    pub ess_factor: f64,
    /// Lower-bound level of the ascent check.
    pub alpha: f64,
    /// Upper-bound level of the stopping check.
    pub gamma: f64,
    /// Stopping tolerance on the change in Q; defaults to `1e-3 * n`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Pool size cap per subject, as a multiple of its target ESS.
    pub max_paths_factor: f64,
    pub pareto_smoothing: bool,
    pub seed: u64,
}

impl Default for McemConfig {
    fn default() -> Self {
        McemConfig {
            ess_target: 25.0,
            ess_factor: 1.3,
            alpha: 0.2,
            gamma: 0.05,
            tol: None,
            max_iter: 100,
            max_paths_factor: 100.0,
            pareto_smoothing: true,
            seed: 1,
        }
    }
}

impl McemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ess_factor > 1.0) {
            return Err(Error::Config("ess_factor must exceed 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("alpha and gamma must lie in (0, 1)".into()));
        }
        if !(self.ess_target >= 1.0) {
            return Err(Error::Config("ess_target must be at least 1".into()));
        }
        if let Some(c) = self.tol {
            if !(c > 0.0) {
                return Err(Error::Config("tol must be positive".into()));
            }
        }
        if self.max_iter == 0 || !(self.max_paths_factor >= 1.0) {
            return Err(Error::Config("max_iter and max_paths_factor must be positive".into()));
        }
        Ok(())
    }

    pub fn tolerance(&self, n_subjects: usize) -> f64 {
        self.tol.unwrap_or(1e-3 * n_subjects as f64)
    }
}

/// One subject's paths with their densities and weights.
#[derive(Clone, Debug)]
pub struct SubjectPool {
    pub paths: Vec<SamplePath>,
    /// Surrogate complete-path log-densities at the proposal parameters.
    pub log_h: Vec<f64>,
    /// Target complete-path log-densities at the current parameters.
    pub log_f: Vec<f64>,
    /// Normalised (and possibly smoothed) weights.
    pub weights: Vec<f64>,
    pub ess: f64,
    pub khat: Khat,
    pub target_ess: f64,
    /// Log marginal likelihood of the subject under the surrogate.
    pub log_r: f64,
    rng: SimRng,
}

impl SubjectPool {
    /// Unsmoothed log-weights `log f - log h`.
    pub fn raw_log_weights(&self) -> Vec<f64> {
        self.log_f.iter().zip(&self.log_h).map(|(f, h)| f - h).collect()
    }
}

/// The MCEM working set.
#[derive(Clone, Debug)]
pub struct PathPool {
    pub subjects: Vec<SubjectPool>,
    contexts: Vec<ProposalContext>,
    designs: Vec<Design>,
    /// Per-subject multipliers of the log-likelihood (bootstrap weights).
    pub subject_weights: Vec<f64>,
    pareto_smoothing: bool,
}

impl PathPool {
    pub fn new(
        model: &SemiMarkovModel,
        surrogate: &MarkovSurrogate,
        subjects: &[Subject],
        ess_target: f64,
        seed: u64,
        pareto_smoothing: bool,
    ) -> Result<Self> {
        let contexts = par::try_map_indexed(subjects.len(), |i| ProposalContext::new(surrogate, &subjects[i]))?;
        let designs = subjects
            .iter()
            .map(|s| model.design(&s.covariates))
            .collect::<Result<Vec<_>>>()?;
        let pools = contexts
            .iter()
            .enumerate()
            .map(|(i, c)| SubjectPool {
                paths: vec![],
                log_h: vec![],
                log_f: vec![],
                weights: vec![],
                ess: 0.0,
                khat: Khat::Unavailable,
                target_ess: ess_target,
                log_r: c.log_marginal(),
                rng: rng::stream(seed, rng::domain::PROPOSAL, i as u64),
            })
            .collect();
        Ok(PathPool {
            subjects: pools,
            contexts,
            designs,
            subject_weights: vec![1.0; subjects.len()],
            pareto_smoothing,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn designs(&self) -> &[Design] {
        &self.designs
    }

    pub fn subject_id(&self, i: usize) -> &str {
        &self.contexts[i].subject().id
    }

    pub fn total_paths(&self) -> usize {
        self.subjects.iter().map(|s| s.paths.len()).sum()
    }

    /// Recomputes target densities and weights at `theta`, then tops every
    /// subject up to its target ESS.
    pub fn reweight(&mut self, model: &SemiMarkovModel, theta: &[f64], max_paths_factor: f64) -> Result<()> {
        let contexts = &self.contexts;
        let designs = &self.designs;
        let smooth = self.pareto_smoothing;
        let mut results: Vec<Result<()>> = (0..self.subjects.len()).map(|_| Ok(())).collect();
        let mut work: Vec<(&mut SubjectPool, &mut Result<()>)> = self.subjects.iter_mut().zip(results.iter_mut()).collect();
        par::for_each_mut(&mut work, |i, (s, res)| {
            **res = fill_subject(s, &contexts[i], model, theta, &designs[i], smooth, max_paths_factor);
        });
        drop(work);
        for r in results {
            r?;
        }
        Ok(())
    }

    /// Multiplies every target ESS by `factor`.
    pub fn raise_targets(&mut self, factor: f64) {
        for s in &mut self.subjects {
            s.target_ess *= factor;
        }
    }

    /// Importance-sampling estimate of Q at `theta`.
    pub fn q_value(&self, model: &SemiMarkovModel, theta: &[f64]) -> f64 {
        self.q_and_grad(model, theta, None)
    }

    /// Q and, if requested, its gradient; both reduced in subject order.
    pub fn q_and_grad(&self, model: &SemiMarkovModel, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let p = model.n_params();
        let want_grad = grad.is_some();
        let n = self.len();
        let chunk = 32;
        let n_chunks = n.div_ceil(chunk);
        let parts: Vec<(f64, Vec<f64>)> = par::map_indexed(n_chunks, |c| {
            let mut g = if want_grad { vec![0.0; p] } else { vec![] };
            let mut total = 0.0;
            for i in c * chunk..((c + 1) * chunk).min(n) {
                let eval = model.evaluator(theta, &self.designs[i]);
                let sp = &self.subjects[i];
                let bw = self.subject_weights[i];
                if bw == 0.0 {
                    continue;
                }
                for (path, &w) in sp.paths.iter().zip(&sp.weights) {
                    if w == 0.0 {
                        continue;
                    }
                    if want_grad {
                        total += eval.accumulate_derivatives(path, bw * w, &mut g, None);
                    } else {
                        total += bw * w * eval.path_loglik(path);
                    }
                }
            }
            (total, g)
        });
        let mut total = 0.0;
        if let Some(g) = grad {
            g.fill(0.0);
            for (v, pg) in &parts {
                total += v;
                for (a, b) in g.iter_mut().zip(pg) {
                    *a += b;
                }
            }
        } else {
            total = parts.iter().map(|(v, _)| v).sum();
        }
        total
    }

    /// Per-subject weighted change in Q between two parameter vectors,
    /// with the ESS-scaled variance used for the asymptotic standard error.
    pub fn delta_q(&self, model: &SemiMarkovModel, from: &[f64], to: &[f64]) -> (f64, f64) {
        let parts = par::map_indexed(self.len(), |i| {
            let e0 = model.evaluator(from, &self.designs[i]);
            let e1 = model.evaluator(to, &self.designs[i]);
            let sp = &self.subjects[i];
            let dl: Vec<f64> = sp.paths.iter().map(|p| e1.path_loglik(p) - e0.path_loglik(p)).collect();
            let dq: f64 = dl.iter().zip(&sp.weights).map(|(d, w)| d * w).sum();
            let var: f64 = dl.iter().zip(&sp.weights).map(|(d, w)| w * (d - dq) * (d - dq)).sum::<f64>() / sp.ess;
            let bw = self.subject_weights[i];
            (bw * dq, bw * bw * var)
        });
        let dq = parts.iter().map(|p| p.0).sum();
        let var: f64 = parts.iter().map(|p| p.1).sum();
        (dq, var.max(0.0).sqrt())
    }

    pub fn ess_summary(&self) -> Quantiles {
        Quantiles::of(self.subjects.iter().map(|s| s.ess).collect())
    }

    pub fn khat_summary(&self) -> Option<Quantiles> {
        let v: Vec<f64> = self.subjects.iter().filter_map(|s| s.khat.value()).collect();
        (!v.is_empty()).then(|| Quantiles::of(v))
    }
}

fn fill_subject(
    s: &mut SubjectPool,
    ctx: &ProposalContext,
    model: &SemiMarkovModel,
    theta: &[f64],
    design: &Design,
    smooth: bool,
    max_paths_factor: f64,
) -> Result<()> {
    let eval = model.evaluator(theta, design);
    for (f, p) in s.log_f.iter_mut().zip(&s.paths) {
        *f = eval.path_loglik(p);
    }
    let cap = (max_paths_factor * s.target_ess).ceil() as usize;
    let mut batch = (s.target_ess.ceil() as usize).saturating_sub(s.paths.len());
    loop {
        for _ in 0..batch {
            let prop = ctx.propose(&mut s.rng)?;
            s.log_f.push(eval.path_loglik(&prop.path));
            s.log_h.push(prop.log_h);
            s.paths.push(prop.path);
        }
        update_weights(s, smooth, &ctx.subject().id)?;
        if s.ess >= s.target_ess * (1.0 - 1e-12) {
            return Ok(());
        }
        let m = s.paths.len();
        if m >= cap {
            return Err(Error::Degenerate {
                subject: ctx.subject().id.clone(),
                khat: s.khat.to_string(),
                reason: format!(
                    "ESS {:.2} below target {:.2} with {m} paths (cap {cap})",
                    s.ess, s.target_ess
                ),
            });
        }
        // Paths needed if the current ESS per path persists.
        let per_path = (s.ess / m as f64).max(1e-3);
        let needed = ((s.target_ess - s.ess) / per_path).ceil() as usize;
        batch = needed.clamp(1, cap - m);
    }
}

fn update_weights(s: &mut SubjectPool, smooth: bool, id: &str) -> Result<()> {
    let mut lw = s.raw_log_weights();
    if lw.iter().all(|v| *v == f64::NEG_INFINITY) || lw.iter().any(|v| v.is_nan()) {
        return Err(Error::Degenerate {
            subject: id.to_string(),
            khat: "unavailable".into(),
            reason: "every importance weight is zero".into(),
        });
    }
    s.khat = if smooth { psis::pareto_smooth(&mut lw) } else { Khat::Unavailable };
    s.weights = psis::normalize(&lw);
    s.ess = psis::ess(&s.weights).clamp(1.0, s.paths.len() as f64);
    Ok(())
}

/// Five-number summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(mut v: Vec<f64>) -> Self {
        v.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Quantiles {
            min: q(0.0),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: q(1.0),
        }
    }
}

/// Outcome of an M-step.
#[derive(Clone, Debug)]
pub struct MStep {
    pub theta: Vec<f64>,
    pub q_new: f64,
    pub delta_q: f64,
    pub ase: f64,
    pub iterations: usize,
}

/// Maximises Q over unconstrained parameters starting at `theta`.
pub fn maximize_q(pool: &PathPool, model: &SemiMarkovModel, theta: &[f64]) -> Result<MStep> {
    let n = pool.len().max(1) as f64;
    let opts = BfgsOptions {
        max_iter: 500,
        gtol: 1e-7 * n,
        ftol: 1e-14,
        max_step: 2.0,
    };
    let res = optim::minimize(
        |x, g| {
            let v = pool.q_and_grad(model, x, Some(g));
            for gi in g.iter_mut() {
                *gi = -*gi;
            }
            -v
        },
        theta,
        &opts,
    );
    if !res.f.is_finite() || res.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "M-step objective is not finite ({}) after {} iterations",
            res.message, res.iterations
        )));
    }
    let (delta_q, ase) = pool.delta_q(model, theta, &res.x);
    Ok(MStep {
        theta: res.x,
        q_new: -res.f,
        delta_q,
        ase,
        iterations: res.iterations,
    })
}

/// Upper standard normal quantile `z_{1-p}`.
fn z_upper(p: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ascent {
    Accept,
    Augment,
}

pub fn ascent_decision(delta_q: f64, ase: f64, alpha: f64) -> Ascent {
    if delta_q - z_upper(alpha) * ase > 0.0 {
        Ascent::Accept
    } else {
        Ascent::Augment
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stopping {
    Stop,
    Continue,
}

pub fn stopping_decision(delta_q: f64, ase: f64, gamma: f64, tol: f64) -> Stopping {
    if delta_q + z_upper(gamma) * ase < tol {
        Stopping::Stop
    } else {
        Stopping::Continue
    }
}

/// One line of the iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub q: f64,
    pub delta_q: f64,
    pub ase: f64,
    pub decision: Ascent,
    pub stop: bool,
    pub total_paths: usize,
    pub target_ess_median: f64,
    pub ess: Quantiles,
    pub khat: Option<Quantiles>,
    pub theta: Vec<f64>,
}

/// Result of an MCEM run.
#[derive(Clone, Debug)]
pub struct McemFit {
    pub theta: Vec<f64>,
    pub pool: PathPool,
    pub trace: Vec<IterationRecord>,
}

/// Options beyond the tuning constants.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Starting parameters; defaults to the values implied by the surrogate.
    pub init: Option<Vec<f64>>,
    /// Per-subject log-likelihood multipliers.
    pub subject_weights: Option<Vec<f64>>,
    /// Reuse an existing pool (for warm starts); its paths are kept.
    pub pool: Option<PathPool>,
}

/// Runs ascent MCEM from the surrogate-implied start.
// TODO: refit the surrogate to the current target when k-hat stays above
// 0.7 for many subjects; the pool is currently tied to the initial Markov fit.
pub fn run_mcem(
    model: &SemiMarkovModel,
    surrogate: &MarkovSurrogate,
    subjects: &[Subject],
    config: &McemConfig,
    options: RunOptions,
) -> Result<McemFit> {
    config.validate()?;
    if subjects.is_empty() {
        return Err(Error::Domain("at least one subject is required".into()));
    }
    let mut theta = options
        .init
        .clone()
        .unwrap_or_else(|| model.init_from_markov(surrogate.theta()));
    if theta.len() != model.n_params() {
        return Err(Error::Domain("initial parameter vector has the wrong length".into()));
    }
    let mut pool = match options.pool {
        Some(p) => p,
        None => PathPool::new(
            model,
            surrogate,
            subjects,
            config.ess_target,
            config.seed,
            config.pareto_smoothing,
        )?,
    };
    if let Some(w) = options.subject_weights {
        if w.len() != subjects.len() {
            return Err(Error::Domain("one weight per subject is required".into()));
        }
        pool.subject_weights = w;
    }
    let tol = config.tolerance(subjects.len());
    pool.reweight(model, &theta, config.max_paths_factor)?;
    let mut trace = Vec::new();
    for iteration in 1..=config.max_iter {
        let step = maximize_q(&pool, model, &theta)?;
        let decision = ascent_decision(step.delta_q, step.ase, config.alpha);
        // The upper bound is checked on every step: near the optimum the
        // change is noise, so waiting for a confident ascent would only
        // grow the pool to resolve a difference already below tolerance.
        let stop = stopping_decision(step.delta_q, step.ase, config.gamma, tol) == Stopping::Stop;
        if stop || decision == Ascent::Accept {
            theta = step.theta.clone();
        } else {
            pool.raise_targets(config.ess_factor);
        }
        pool.reweight(model, &theta, config.max_paths_factor)?;
        let targets = Quantiles::of(pool.subjects.iter().map(|s| s.target_ess).collect());
        trace.push(IterationRecord {
            iteration,
            q: step.q_new,
            delta_q: step.delta_q,
            ase: step.ase,
            decision,
            stop,
            total_paths: pool.total_paths(),
            target_ess_median: targets.median,
            ess: pool.ess_summary(),
            khat: pool.khat_summary(),
            theta: theta.clone(),
        });
        if stop {
            return Ok(McemFit { theta, pool, trace });
        }
    }
    Err(Error::NonConvergence(format!(
        "MCEM did not meet the stopping rule within {} iterations; last record: {}",
        config.max_iter,
        trace
            .last()
            .map(|r| serde_json::to_string(r).unwrap_or_default())
            .unwrap_or_default()
    )))
}

/// Weighted observed-data quantities needed downstream, at the pool's parameters.
pub fn weighted_score_and_hessian(
    pool: &PathPool,
    model: &SemiMarkovModel,
    theta: &[f64],
    i: usize,
) -> (Vec<Vec<f64>>, Vec<DMatrix<f64>>) {
    let p = model.n_params();
    let eval = model.evaluator(theta, &pool.designs[i]);
    let sp = &pool.subjects[i];
    let mut grads = Vec::with_capacity(sp.paths.len());
    let mut hessians = Vec::with_capacity(sp.paths.len());
    for path in &sp.paths {
        let mut g = vec![0.0; p];
        let mut h = DMatrix::zeros(p, p);
        eval.accumulate_derivatives(path, 1.0, &mut g, Some(&mut h));
        grads.push(g);
        hessians.push(h);
    }
    (grads, hessians)
}
