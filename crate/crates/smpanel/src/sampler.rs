//! Data-conditioned path proposals from the Markov surrogate.
//!
//! A proposal is built in two stages. Forward filtering over the record
//! kernels followed by backward sampling draws the states at the record
//! boundaries from their exact posterior under the surrogate. Each
//! snapshot interval is then filled with an endpoint-conditioned path drawn
//! by uniformization, and continuously observed records are reproduced
//! as recorded.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::Subject;
use crate::error::{Error, Result};
use crate::markov::{self, Forward, Kernel, MarkovSurrogate};
use crate::model::{Design, SemiMarkovModel};
use crate::path::SamplePath;
use crate::rng::SimRng;
use crate::simulate;
use crate::state::StateSet;

/// Upper bound on the number of uniformized jumps in one interval.
const MAX_UNIFORM_JUMPS: usize = 100_000;
const JUMP_MASS_TOL: f64 = 1e-10;
const DOMINATING_FACTOR: f64 = 1.5;

/// Everything needed to draw paths for one subject.
#[derive(Clone, Debug)]
pub struct ProposalContext {
    subject: Subject,
    surrogate: MarkovSurrogate,
    design: Design,
    generator: DMatrix<f64>,
    kernels: Vec<Kernel>,
    forward: Forward,
}

/// A proposed path with its surrogate densities.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub path: SamplePath,
    /// Unconditional complete-path log-density under the surrogate.
    pub log_h: f64,
    /// Log-density of the data-conditioned proposal.
    pub log_q: f64,
}

impl ProposalContext {
    pub fn new(surrogate: &MarkovSurrogate, subject: &Subject) -> Result<Self> {
        let design = surrogate.model().design(&subject.covariates)?;
        let rates = surrogate.rates(&design);
        let space = surrogate.space();
        let kernels = markov::record_kernels(space, &rates, subject, true)?;
        let forward = markov::forward(&kernels, subject, space.n_states())?;
        Ok(ProposalContext {
            subject: subject.clone(),
            surrogate: surrogate.clone(),
            generator: markov::generator_from_rates(space, &rates, StateSet::EMPTY),
            design,
            kernels,
            forward,
        })
    }

    pub fn subject(&self) -> &Subject {
        &self.subject
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    /// `log r_i`, the subject's log marginal likelihood under the surrogate.
    pub fn log_marginal(&self) -> f64 {
        self.forward.log_r
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    /// Draws the boundary states from their surrogate posterior. Returns
    /// the sequence and its conditional log-probability.
    pub fn ffbs(&self, rng: &mut SimRng) -> (Vec<usize>, f64) {
        let n = self.kernels.len();
        let k = self.generator.nrows();
        let mut seq = vec![0; n + 1];
        let mut logp = 0.0;
        let (s, p) = draw_categorical(self.forward.alpha[n].as_slice(), rng);
        seq[n] = s;
        logp += p.ln();
        let mut w = vec![0.0; k];
        for j in (0..n).rev() {
            let m = self.kernels[j].matrix();
            let b = seq[j + 1];
            for a in 0..k {
                w[a] = self.forward.alpha[j][a] * m[(a, b)];
            }
            let (s, p) = draw_categorical(&w, rng);
            seq[j] = s;
            logp += p.ln();
        }
        (seq, logp)
    }

    /// Draws one concordant path.
    pub fn propose(&self, rng: &mut SimRng) -> Result<Proposal> {
        let (skeleton, log_skel) = self.ffbs(rng);
        let mut path = SamplePath::constant(skeleton[0], self.subject.start(), self.subject.end());
        let mut log_kernel = 0.0;
        for (j, (rec, kern)) in self.subject.records.iter().zip(&self.kernels).enumerate() {
            let (a, b) = (skeleton[j], skeleton[j + 1]);
            log_kernel += kern.matrix()[(a, b)].ln();
            match kern {
                Kernel::Snapshot { dt, generator, p } => {
                    let jumps = sample_interval(generator, a, b, *dt, p[(a, b)], rng)
                        .map_err(|e| with_subject(e, &self.subject.id))?;
                    for (t, s) in jumps {
                        path.push(rec.t_start + t, s);
                    }
                }
                Kernel::Exact { dt, from, .. } => {
                    let sub = restricted_generator(&self.generator, *from);
                    let g = markov::expm(&sub, *dt)?;
                    let end_in = if from.contains(b) {
                        b
                    } else {
                        // State occupied just before the jump into `b`.
                        let members: Vec<usize> = from.iter().collect();
                        let w: Vec<f64> = members.iter().map(|&c| g[(a, c)] * self.generator[(c, b)]).collect();
                        members[draw_categorical(&w, rng).0]
                    };
                    if end_in != a || from.len() > 1 {
                        let jumps = sample_interval(&sub, a, end_in, *dt, g[(a, end_in)], rng)
                            .map_err(|e| with_subject(e, &self.subject.id))?;
                        for (t, s) in jumps {
                            path.push(rec.t_start + t, s);
                        }
                    }
                    if end_in != b {
                        path.push(rec.t_stop, b);
                    }
                }
            }
        }
        let model = self.surrogate.model();
        let log_h = model.evaluator(self.surrogate.theta(), &self.design).path_loglik(&path);
        // q(Z) = P(skeleton | Y) * prod_j [density of piece j / K_j(a_j, b_j)].
        let log_q = log_skel + log_h - log_kernel;
        Ok(Proposal { path, log_h, log_q })
    }
}

fn with_subject(e: Error, id: &str) -> Error {
    match e {
        Error::Infeasible { reason, .. } => Error::Infeasible {
            subject: id.to_string(),
            reason,
        },
        other => other,
    }
}

/// Generator restricted to moves within `set`; rows keep their full exit rate.
fn restricted_generator(q: &DMatrix<f64>, set: StateSet) -> DMatrix<f64> {
    let k = q.nrows();
    let mut out = DMatrix::zeros(k, k);
    for a in set.iter() {
        out[(a, a)] = q[(a, a)];
        for b in set.iter() {
            if a != b {
                out[(a, b)] = q[(a, b)];
            }
        }
    }
    out
}

/// Index drawn proportionally to nonnegative weights, and its probability.
fn draw_categorical(weights: &[f64], rng: &mut SimRng) -> (usize, f64) {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    let mut last_w = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        last_w = w;
        if u < acc {
            return (i, w / total);
        }
    }
    (last, last_w / total)
}

/// Endpoint-conditioned path of a (sub-)generator on `(0, dt]` from `a` to
/// `b`, returned as `(time offset, new state)` jumps. `p_ab` is
/// `exp(q dt)[a, b]`.
pub fn sample_interval(
    q: &DMatrix<f64>,
    a: usize,
    b: usize,
    dt: f64,
    p_ab: f64,
    rng: &mut SimRng,
) -> Result<Vec<(f64, usize)>> {
    if !(p_ab > 0.0) {
        return Err(Error::Infeasible {
            subject: String::new(),
            reason: format!("state {} cannot reach state {} over an interval of {dt}", a + 1, b + 1),
        });
    }
    let k = q.nrows();
    let max_exit = (0..k).map(|s| -q[(s, s)]).fold(0.0, f64::max);
    if max_exit <= 0.0 || (a == b && (0..k).all(|c| c == a || q[(a, c)] == 0.0)) {
        return if a == b {
            Ok(vec![])
        } else {
            Err(Error::Infeasible {
                subject: String::new(),
                reason: format!("no transition out of state {}", a + 1),
            })
        };
    }
    let mu = DOMINATING_FACTOR * max_exit;
    let r = DMatrix::identity(k, k) + q / mu;
    let mdt = mu * dt;
    // v[n] = R^n e_b
    let mut v: Vec<DVector<f64>> = Vec::new();
    let mut e_b = DVector::zeros(k);
    e_b[b] = 1.0;
    v.push(e_b);
    let u = rng.random::<f64>();
    let mut log_pois = -mdt;
    let mut cum = 0.0;
    let mut n = 0;
    loop {
        if n > 0 {
            log_pois += mdt.ln() - (n as f64).ln();
            let next = &r * &v[n - 1];
            v.push(next);
        }
        let term = (log_pois).exp() * v[n][a] / p_ab;
        cum += term;
        if u < cum || cum >= 1.0 - JUMP_MASS_TOL {
            break;
        }
        if n >= MAX_UNIFORM_JUMPS {
            return Err(Error::Numerical(format!(
                "uniformization did not settle on a jump count (conditional mass {cum} after {n} jumps)"
            )));
        }
        n += 1;
    }
    if n == 0 {
        return Ok(vec![]);
    }
    let mut times: Vec<f64> = (0..n)
        .map(|_| loop {
            let x = rng.random::<f64>();
            if x > 0.0 {
                break x * dt;
            }
        })
        .collect();
    times.sort_by(|x, y| x.total_cmp(y));
    let mut out = Vec::new();
    let mut w = vec![0.0; k];
    let mut s = a;
    for (i, &t) in times.iter().enumerate() {
        let remaining = n - i - 1;
        let denom = v[remaining + 1][s];
        for c in 0..k {
            w[c] = r[(s, c)] * v[remaining][c] / denom;
        }
        let (c, _) = draw_categorical(&w, rng);
        if c != s {
            out.push((t, c));
            s = c;
        }
    }
    debug_assert_eq!(s, b);
    Ok(out)
}

/// Outcome of rejection sampling.
#[derive(Clone, Debug)]
pub struct RejectionOutcome {
    pub path: Option<SamplePath>,
    pub attempts: usize,
}

/// Forward-simulates the semi-Markov model from the subject's enrolment
/// state until a path concordant with every record appears.
pub fn rejection_sample_path(
    model: &SemiMarkovModel,
    theta: &[f64],
    subject: &Subject,
    rng: &mut SimRng,
    max_attempts: usize,
) -> Result<RejectionOutcome> {
    let design = model.design(&subject.covariates)?;
    let eval = model.evaluator(theta, &design);
    let initial = subject.initial_state().ok_or_else(|| Error::Infeasible {
        subject: subject.id.clone(),
        reason: "the first record does not fix the initial state".into(),
    })?;
    for attempt in 1..=max_attempts {
        let path = simulate::simulate_from(&eval, initial, subject.start(), subject.end(), rng)?;
        if path.is_concordant(subject) {
            return Ok(RejectionOutcome {
                path: Some(path),
                attempts: attempt,
            });
        }
    }
    Ok(RejectionOutcome {
        path: None,
        attempts: max_attempts,
    })
}
