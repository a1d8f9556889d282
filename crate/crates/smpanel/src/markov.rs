//! Time-homogeneous Markov models on the same transition graph: the
//! proposal surrogate, its exact likelihood for candidate-set panel data,
//! direct maximum likelihood, and Coxian phase-type expansions.
//!
//! Record kernels. For a snapshot record the kernel is the transition
//! matrix `P = exp(Q dt)`. For a continuously observed record from set `S`
//! into set `A` it is `exp(Q_SS dt)` for staying within `S`, followed by
//! the intensity of the jump into `A \ S` at `t_stop`. The forward
//! recursion multiplies these kernels and restricts each boundary to its
//! candidate set.
//!
//! Conditioning masks remove intensities into states that cannot reach the
//! next candidate set while leaving the diagonal untouched. The masked
//! matrix is then a sub-generator whose entries `exp(Q dt)[a, b]` for `b`
//! in the candidate set coincide with the unmasked ones, so masking never
//! changes the likelihood or the conditional law of proposed paths.

use nalgebra::{DMatrix, DVector};

use crate::data::{ObsType, Subject};
use crate::error::{Error, Result};
use crate::model::{Baseline, Design, Hazard, SemiMarkovModel};
use crate::optim::{self, BfgsOptions};
use crate::par;
use crate::state::{StateSet, StateSpace};

/// Matrix exponential of `q * dt` (scaling and squaring with Padé
/// approximants), with tiny negative round-off clamped to zero.
pub fn expm(q: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let a = q * dt;
    let mut p = a.exp();
    for v in p.iter_mut() {
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "matrix exponential produced a non-finite entry for generator {q} and dt = {dt}"
            )));
        }
        if *v < 0.0 {
            if *v < -1e-10 {
                return Err(Error::Numerical(format!(
                    "matrix exponential produced a negative entry {v} for generator {q} and dt = {dt}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(p)
}

/// Generator with transitions into `forbidden_targets` removed; diagonal
/// entries keep the full exit rate (sub-generator semantics).
pub fn generator_from_rates(space: &StateSpace, rates: &[f64], forbidden_targets: StateSet) -> DMatrix<f64> {
    let k = space.n_states();
    let mut q = DMatrix::zeros(k, k);
    for (h, &(a, b)) in space.transitions().iter().enumerate() {
        q[(a, a)] -= rates[h];
        if !forbidden_targets.contains(b) {
            q[(a, b)] = rates[h];
        }
    }
    q
}

/// Kernel of one record under the surrogate.
#[derive(Clone, Debug)]
pub enum Kernel {
    Snapshot {
        dt: f64,
        /// Masked generator used for endpoint-conditioned sampling.
        generator: DMatrix<f64>,
        p: DMatrix<f64>,
    },
    Exact {
        dt: f64,
        from: StateSet,
        to: StateSet,
        e: DMatrix<f64>,
    },
}

impl Kernel {
    pub fn matrix(&self) -> &DMatrix<f64> {
        match self {
            Kernel::Snapshot { p, .. } => p,
            Kernel::Exact { e, .. } => e,
        }
    }
}

/// Builds one kernel per record for a subject with the given transition rates.
pub fn record_kernels(space: &StateSpace, rates: &[f64], subject: &Subject, with_generator: bool) -> Result<Vec<Kernel>> {
    let sets = subject.boundary_sets();
    let full = generator_from_rates(space, rates, StateSet::EMPTY);
    subject
        .records
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let dt = r.t_stop - r.t_start;
            match r.obstype {
                ObsType::Snapshot => {
                    let target = sets[j + 1];
                    let reach = space.can_reach(target);
                    let forbidden = StateSet::from_states((0..space.n_states()).filter(|&s| !reach.contains(s)));
                    let g = generator_from_rates(space, rates, forbidden);
                    let p = expm(&g, dt)?;
                    Ok(Kernel::Snapshot {
                        dt,
                        generator: if with_generator { g } else { DMatrix::zeros(0, 0) },
                        p,
                    })
                }
                ObsType::Exact => Ok(Kernel::Exact {
                    dt,
                    from: r.from,
                    to: r.to,
                    e: exact_kernel(&full, r.from, r.to, dt)?,
                }),
            }
        })
        .collect()
}

/// Density of staying inside `from` for `dt`, then being in `to` at the
/// end (with the jump intensity when the end state lies outside `from`).
fn exact_kernel(q: &DMatrix<f64>, from: StateSet, to: StateSet, dt: f64) -> Result<DMatrix<f64>> {
    let k = q.nrows();
    let mut e = DMatrix::zeros(k, k);
    if let Some(f) = from.as_single() {
        let stay = (q[(f, f)] * dt).exp();
        for b in to.iter() {
            e[(f, b)] = if b == f { stay } else { stay * q[(f, b)] };
        }
        return Ok(e);
    }
    let mut qs = DMatrix::zeros(k, k);
    for a in from.iter() {
        for b in from.iter() {
            qs[(a, b)] = q[(a, b)];
        }
    }
    let g = expm(&qs, dt)?;
    for a in from.iter() {
        for b in to.iter() {
            e[(a, b)] = if from.contains(b) {
                g[(a, b)]
            } else {
                from.iter().map(|c| g[(a, c)] * q[(c, b)]).sum()
            };
        }
    }
    Ok(e)
}

/// Normalised forward probabilities at each boundary and the log
/// marginal likelihood.
#[derive(Clone, Debug)]
pub struct Forward {
    pub alpha: Vec<DVector<f64>>,
    pub log_r: f64,
}

pub fn forward(kernels: &[Kernel], subject: &Subject, k: usize) -> Result<Forward> {
    let sets = subject.boundary_sets();
    let initial = subject.initial_state().ok_or_else(|| Error::Infeasible {
        subject: subject.id.clone(),
        reason: "the first record does not fix the initial state".into(),
    })?;
    let mut alpha = Vec::with_capacity(kernels.len() + 1);
    let mut a0 = DVector::zeros(k);
    a0[initial] = 1.0;
    alpha.push(a0);
    let mut log_r = 0.0;
    for (j, kern) in kernels.iter().enumerate() {
        let m = kern.matrix();
        let prev = &alpha[j];
        let mut next = DVector::zeros(k);
        for b in sets[j + 1].iter() {
            let mut s = 0.0;
            for a in 0..k {
                if prev[a] != 0.0 {
                    s += prev[a] * m[(a, b)];
                }
            }
            next[b] = s;
        }
        let c: f64 = next.sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Infeasible {
                subject: subject.id.clone(),
                reason: format!("no state sequence is consistent with records 1..={}", j + 1),
            });
        }
        next /= c;
        log_r += c.ln();
        alpha.push(next);
    }
    Ok(Forward { alpha, log_r })
}

/// Fitted (or user-supplied) time-homogeneous Markov model.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovSurrogate {
    model: SemiMarkovModel,
    theta: Vec<f64>,
}

impl MarkovSurrogate {
    pub fn new(model: SemiMarkovModel, theta: Vec<f64>) -> Result<Self> {
        if !model.is_exponential() {
            return Err(Error::Config("a Markov surrogate needs exponential hazards".into()));
        }
        if theta.len() != model.n_params() {
            return Err(Error::Domain("surrogate parameter length mismatch".into()));
        }
        Ok(MarkovSurrogate { model, theta })
    }

    pub fn model(&self) -> &SemiMarkovModel {
        &self.model
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn space(&self) -> &StateSpace {
        self.model.space()
    }

    /// Transition rates for one covariate profile, in transition order.
    pub fn rates(&self, design: &Design) -> Vec<f64> {
        let ev = self.model.evaluator(&self.theta, design);
        (0..self.space().n_transitions()).map(|h| ev.intensity(h, 0.0)).collect()
    }

    /// Intensity matrix with the listed transitions removed (diagonal keeps
    /// the full exit rate).
    pub fn intensity_matrix(&self, design: &Design, forbidden: &[usize]) -> DMatrix<f64> {
        let mut rates = self.rates(design);
        let full = generator_from_rates(self.space(), &rates, StateSet::EMPTY);
        for &h in forbidden {
            rates[h] = 0.0;
        }
        let mut q = generator_from_rates(self.space(), &rates, StateSet::EMPTY);
        for s in 0..q.nrows() {
            q[(s, s)] = full[(s, s)];
        }
        q
    }

    pub fn transition_matrix(&self, design: &Design, dt: f64) -> Result<DMatrix<f64>> {
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        expm(&self.intensity_matrix(design, &[]), dt)
    }

    /// Log marginal likelihood `log r_i` of one subject.
    pub fn subject_loglik(&self, subject: &Subject) -> Result<f64> {
        let design = self.model.design(&subject.covariates)?;
        self.subject_loglik_with(subject, &design)
    }

    pub fn subject_loglik_with(&self, subject: &Subject, design: &Design) -> Result<f64> {
        let rates = self.rates(design);
        let kernels = record_kernels(self.space(), &rates, subject, false)?;
        Ok(forward(&kernels, subject, self.space().n_states())?.log_r)
    }

    /// Sum of subject log marginal likelihoods.
    pub fn marginal_loglik(&self, subjects: &[Subject]) -> Result<f64> {
        let parts = par::try_map_indexed(subjects.len(), |i| self.subject_loglik(&subjects[i]))?;
        Ok(parts.into_iter().sum())
    }
}

/// Outcome of a direct Markov fit.
#[derive(Clone, Debug)]
pub struct MarkovFit {
    pub surrogate: MarkovSurrogate,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Parameters that drifted to the boundary of the parameter space.
    pub boundary: Vec<String>,
    pub message: String,
}

/// Crude event/exposure rates from records whose neighbouring boundaries
/// are both known exactly; used as a starting point.
pub fn crude_rates(model: &SemiMarkovModel, subjects: &[Subject]) -> Vec<f64> {
    let space = model.space();
    let mut events = vec![0.0; space.n_transitions()];
    let mut exposure = vec![0.0; space.n_states()];
    for s in subjects {
        let sets = s.boundary_sets();
        for (j, r) in s.records.iter().enumerate() {
            if let (Some(a), Some(b)) = (sets[j].as_single(), sets[j + 1].as_single()) {
                exposure[a] += r.t_stop - r.t_start;
                if a != b {
                    let h = space.transition_index(a, b).or_else(|| {
                        space
                            .exits(a)
                            .iter()
                            .copied()
                            .find(|&h| space.reachable_from(space.transitions()[h].1).contains(b))
                    });
                    if let Some(h) = h {
                        events[h] += 1.0;
                    }
                }
            }
        }
    }
    let mut theta = vec![0.0; model.n_params()];
    for (h, &(a, _)) in space.transitions().iter().enumerate() {
        let rate = (events[h] + 0.5) / (exposure[a] + 1.0);
        theta[model.base_range(h).start] = rate.ln();
    }
    theta
}

/// Maximises the exact Markov likelihood over log rates and regression
/// coefficients.
pub fn fit_markov_mle(model: &SemiMarkovModel, subjects: &[Subject], init: Option<&[f64]>) -> Result<MarkovFit> {
    fit_markov_mle_weighted(model, subjects, None, init)
}

/// As [`fit_markov_mle`], with subject log-likelihoods multiplied by
/// `weights` (used by the Bayesian bootstrap).
pub fn fit_markov_mle_weighted(
    model: &SemiMarkovModel,
    subjects: &[Subject],
    weights: Option<&[f64]>,
    init: Option<&[f64]>,
) -> Result<MarkovFit> {
    if subjects.is_empty() {
        return Err(Error::Domain("at least one subject is required".into()));
    }
    if let Some(w) = weights {
        if w.len() != subjects.len() {
            return Err(Error::Domain(format!("{} weights for {} subjects", w.len(), subjects.len())));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let model = if model.is_exponential() {
        model.clone()
    } else {
        model.exponential_analogue()
    };
    let designs = subjects
        .iter()
        .map(|s| model.design(&s.covariates))
        .collect::<Result<Vec<_>>>()?;
    let theta0 = match init {
        Some(t) => t.to_vec(),
        None => crude_rates(&model, subjects),
    };
    // Feasibility is parameter-free for positive rates; surface it up front.
    let start = MarkovSurrogate::new(model.clone(), theta0.clone())?;
    for (s, d) in subjects.iter().zip(&designs) {
        start.subject_loglik_with(s, d)?;
    }
    let negll = |theta: &[f64]| -> f64 {
        let surr = MarkovSurrogate {
            model: model.clone(),
            theta: theta.to_vec(),
        };
        let total = par::chunked_sum(subjects.len(), 16, |range| {
            range
                .map(|i| {
                    weight(i)
                        * surr
                            .subject_loglik_with(&subjects[i], &designs[i])
                            .unwrap_or(f64::NEG_INFINITY)
                })
                .sum()
        });
        -total
    };
    let opts = BfgsOptions {
        max_iter: 400,
        gtol: 1e-5,
        ftol: 1e-13,
        max_step: 3.0,
    };
    let res = optim::minimize(
        |x, g| {
            let f = negll(x);
            if f.is_finite() {
                optim::numerical_gradient(negll, x, 1e-5, g);
            }
            f
        },
        &theta0,
        &opts,
    );
    let names = model.param_names();
    let boundary: Vec<String> = res
        .x
        .iter()
        .enumerate()
        .filter(|&(i, &v)| model.is_log_scale(i) && v < -15.0)
        .map(|(i, _)| names[i].clone())
        .collect();
    if !res.converged && boundary.is_empty() {
        return Err(Error::NonConvergence(format!(
            "Markov MLE stopped after {} iterations: {} (objective {}, max |gradient| {:.3e})",
            res.iterations,
            res.message,
            res.f,
            res.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()))
        )));
    }
    let converged = boundary.is_empty();
    let message = if converged {
        res.message.clone()
    } else {
        format!("rates at the boundary of the parameter space: {}", boundary.join(", "))
    };
    Ok(MarkovFit {
        surrogate: MarkovSurrogate {
            model,
            theta: res.x,
        },
        loglik: -res.f,
        iterations: res.iterations,
        converged,
        boundary,
        message,
    })
}

/// Observed information of the exact Markov likelihood (numerical Hessian).
pub fn markov_information(surrogate: &MarkovSurrogate, subjects: &[Subject]) -> Result<DMatrix<f64>> {
    let model = surrogate.model().clone();
    let designs = subjects
        .iter()
        .map(|s| model.design(&s.covariates))
        .collect::<Result<Vec<_>>>()?;
    let ll = |theta: &[f64]| -> f64 {
        let surr = MarkovSurrogate {
            model: model.clone(),
            theta: theta.to_vec(),
        };
        par::chunked_sum(subjects.len(), 16, |range| {
            range
                .map(|i| surr.subject_loglik_with(&subjects[i], &designs[i]).unwrap_or(f64::NAN))
                .sum()
        })
    };
    let h = optim::numerical_hessian(ll, surrogate.theta(), 1e-4);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Markov information matrix".into()));
    }
    Ok(-h)
}

/// Latent Coxian expansion of one state.
#[derive(Clone, Debug)]
pub struct CoxianExpansion {
    pub latent: SemiMarkovModel,
    /// Observed state of each latent state.
    pub map: Vec<usize>,
    /// Latent entry state of each observed state.
    pub entry: Vec<usize>,
    pub expanded_state: usize,
    pub n_phases: usize,
}

/// Replaces `state` by `n_phases` sequential latent phases. Every phase
/// keeps its own copy of the state's exits (including the feeding
/// transition `state -> feeds`), and phase `i` progresses to phase `i+1`.
pub fn coxian_expansion(model: &SemiMarkovModel, state: usize, feeds: usize, n_phases: usize) -> Result<CoxianExpansion> {
    let space = model.space();
    if n_phases == 0 {
        return Err(Error::Domain("a Coxian expansion needs at least one phase".into()));
    }
    if state >= space.n_states() || space.is_absorbing(state) {
        return Err(Error::Domain(format!(
            "state {} is absorbing or outside the state space and cannot be expanded",
            state + 1
        )));
    }
    if space.transition_index(state, feeds).is_none() {
        return Err(Error::Domain(format!(
            "transition {}->{} does not exist",
            state + 1,
            feeds + 1
        )));
    }
    let mut names = Vec::new();
    let mut map = Vec::new();
    let mut entry = Vec::new();
    let mut phase_ids = Vec::new();
    for (s, name) in space.names().iter().enumerate() {
        entry.push(names.len());
        if s == state && n_phases > 1 {
            for i in 0..n_phases {
                phase_ids.push(names.len());
                names.push(format!("{name}{}", (b'a' + i as u8) as char));
                map.push(s);
            }
        } else {
            if s == state {
                phase_ids.push(names.len());
            }
            names.push(name.clone());
            map.push(s);
        }
    }
    let mut transitions = Vec::new();
    let mut hazards = Vec::new();
    for (h, &(a, b)) in space.transitions().iter().enumerate() {
        let covs = model.hazards()[h].covariates.clone();
        let sources: Vec<usize> = if a == state { phase_ids.clone() } else { vec![entry[a]] };
        for src in sources {
            transitions.push((src, entry[b]));
            hazards.push(Hazard {
                baseline: Baseline::Exponential,
                covariates: covs.clone(),
            });
        }
    }
    for w in phase_ids.windows(2) {
        transitions.push((w[0], w[1]));
        hazards.push(Hazard {
            baseline: Baseline::Exponential,
            covariates: vec![],
        });
    }
    let latent_space = StateSpace::new(names, transitions)?;
    let latent = SemiMarkovModel::new(latent_space, hazards)?;
    Ok(CoxianExpansion {
        latent,
        map,
        entry,
        expanded_state: state,
        n_phases,
    })
}

impl CoxianExpansion {
    pub fn latent_set(&self, observed: StateSet) -> StateSet {
        StateSet::from_states((0..self.map.len()).filter(|&l| observed.contains(self.map[l])))
    }

    /// Translates a subject's records into latent candidate sets; the
    /// enrolment state maps to its first phase.
    pub fn latent_subject(&self, subject: &Subject) -> Subject {
        let mut s = subject.clone();
        for (j, r) in s.records.iter_mut().enumerate() {
            r.from = if j == 0 {
                StateSet::from_states(r.from.iter().map(|o| self.entry[o]))
            } else {
                self.latent_set(r.from)
            };
            r.to = self.latent_set(r.to);
        }
        s
    }

    /// Starting values from a fitted Markov model on the observed space:
    /// later phases leave faster, and the phase progression runs at the
    /// state's total exit rate.
    pub fn init_from_markov(&self, observed: &SemiMarkovModel, theta: &[f64]) -> Vec<f64> {
        let lat = &self.latent;
        let lspace = lat.space();
        let ospace = observed.space();
        let mut out = vec![0.0; lat.n_params()];
        let total_exit: f64 = ospace
            .exits(self.expanded_state)
            .iter()
            .map(|&h| theta[observed.base_range(h).start].exp())
            .sum();
        for (lh, &(la, lb)) in lspace.transitions().iter().enumerate() {
            let (oa, ob) = (self.map[la], self.map[lb]);
            let r = lat.base_range(lh).start;
            if oa == ob {
                out[r] = total_exit.ln();
                continue;
            }
            let oh = ospace.transition_index(oa, ob).expect("latent transition has an observed origin");
            let phase = la - self.entry[oa];
            let factor = if self.n_phases > 1 && oa == self.expanded_state {
                0.5 * 4f64.powf(phase as f64 / (self.n_phases - 1) as f64)
            } else {
                1.0
            };
            out[r] = theta[observed.base_range(oh).start] + factor.ln();
            let src = observed.beta_range(oh);
            out[lat.beta_range(lh)].copy_from_slice(&theta[src]);
        }
        out
    }
}
