//! Forward simulation of semi-Markov paths and the observation schemes
//! that turn them into panel records.

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, ObsType, Record, Subject};
use crate::error::{Error, Result};
use crate::model::{Baseline, HazardEval, SemiMarkovModel};
use crate::par;
use crate::path::SamplePath;
use crate::rng::{self, SimRng};
use crate::state::{StateSet, StateSpace};

const ROOT_TOL: f64 = 1e-10;

/// Simulates from state index 0 at time 0 until absorption or `horizon`.
pub fn simulate_path(
    model: &SemiMarkovModel,
    theta: &[f64],
    covariates: &Covariates,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<SamplePath> {
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    let design = model.design(covariates)?;
    simulate_from(&model.evaluator(theta, &design), 0, 0.0, horizon, rng)
}

/// Simulates from `initial`, entered at `start`, censoring at `horizon`.
pub fn simulate_from(
    eval: &HazardEval<'_>,
    initial: usize,
    start: f64,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<SamplePath> {
    let space = eval.model().space();
    let mut path = SamplePath::constant(initial, start, horizon);
    let mut now = start;
    let mut state = initial;
    while !space.is_absorbing(state) {
        let remaining = horizon - now;
        if remaining <= 0.0 {
            break;
        }
        let e: f64 = Exp1.sample(rng);
        let Some(w) = draw_sojourn(eval, state, e, remaining)? else {
            break;
        };
        let exits = space.exits(state);
        let weights: Vec<f64> = exits.iter().map(|&h| eval.intensity(h, w)).collect();
        let total: f64 = weights.iter().sum();
        let h = if total > 0.0 && total.is_finite() {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = exits[exits.len() - 1];
            for (i, &wt) in weights.iter().enumerate() {
                acc += wt;
                if u < acc {
                    pick = exits[i];
                    break;
                }
            }
            pick
        } else {
            // Infinite intensity at w = 0 (shape below one): split by cumulative hazard.
            let ch: Vec<f64> = exits.iter().map(|&h| eval.cumhaz(h, 0.0, w.max(1e-300))).collect();
            let tot: f64 = ch.iter().sum();
            let u = rng.random::<f64>() * tot;
            let mut acc = 0.0;
            let mut pick = exits[exits.len() - 1];
            for (i, &c) in ch.iter().enumerate() {
                acc += c;
                if u < acc {
                    pick = exits[i];
                    break;
                }
            }
            pick
        };
        let next = space.transitions()[h].1;
        let mut t = now + w;
        if t <= now {
            t = next_up(now);
        }
        if t >= horizon {
            break;
        }
        path.push(t, next);
        now = t;
        state = next;
    }
    Ok(path)
}

fn next_up(x: f64) -> f64 {
    let bits = x.to_bits();
    if x >= 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// Sojourn `w` with total cumulative hazard `Lambda(w) = e`, or `None`
/// if the state is still occupied after `remaining`.
fn draw_sojourn(eval: &HazardEval<'_>, state: usize, e: f64, remaining: f64) -> Result<Option<f64>> {
    let model = eval.model();
    let exits = model.space().exits(state);
    if exits.iter().all(|&h| matches!(model.hazards()[h].baseline, Baseline::Exponential)) {
        let rate: f64 = exits.iter().map(|&h| eval.intensity(h, 0.0)).sum();
        let w = e / rate;
        return Ok((w < remaining).then_some(w));
    }
    if exits.len() == 1 && matches!(model.hazards()[exits[0]].baseline, Baseline::Weibull) {
        let h = exits[0];
        let w = (e / (eval.scale(h) * eval.multiplier(h))).powf(1.0 / eval.shape(h));
        return Ok((w < remaining).then_some(w));
    }
    if eval.total_cumhaz(state, remaining) <= e {
        return Ok(None);
    }
    solve_cumhaz(eval, state, e, remaining).map(Some)
}

/// Safeguarded Newton iteration on `Lambda(w) - e` over `[0, hi]`.
fn solve_cumhaz(eval: &HazardEval<'_>, state: usize, e: f64, hi: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, hi);
    let total_hi = eval.total_cumhaz(state, hi);
    let mut w = hi * (e / total_hi).clamp(0.0, 1.0);
    for _ in 0..300 {
        let f = eval.total_cumhaz(state, w) - e;
        if f > 0.0 {
            hi = w;
        } else {
            lo = w;
        }
        if hi - lo <= ROOT_TOL * hi.max(1.0) || f == 0.0 {
            return Ok(w);
        }
        let d = eval.total_intensity(state, w);
        let newton = w - f / d;
        w = if d > 0.0 && d.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo) < ROOT_TOL {
            return Ok(w);
        }
    }
    Err(Error::Numerical(format!(
        "sojourn inversion in state {} did not converge: target {e}, bracket [{lo}, {hi}], hazards {:?}",
        state + 1,
        eval.model()
            .space()
            .exits(state)
            .iter()
            .map(|&h| (h, eval.intensity(h, 0.5 * (lo + hi))))
            .collect::<Vec<_>>()
    )))
}

/// How observed states are reported at assessments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Encoding {
    /// The true state is revealed at each assessment.
    Identity,
    /// Nine-state infection model observed through PCR, symptoms and
    /// final serology, coded in the five-state reduced model.
    Trial9Reduced5,
}

/// 9-state indices whose PCR assay is positive.
const PCR_POS: [usize; 4] = [1, 2, 5, 6];
/// 9-state indices that have ever been symptomatic.
const SYMPTOMATIC: [usize; 4] = [5, 6, 7, 8];
/// 9-state indices that are seropositive.
const SERO_POS: [usize; 4] = [2, 4, 6, 8];

impl Encoding {
    /// Observed-state index of a true state, where the mapping is one-to-one per state.
    pub fn map_state(&self, s: usize) -> usize {
        match self {
            Encoding::Identity => s,
            Encoding::Trial9Reduced5 => [0, 1, 1, 2, 2, 3, 3, 4, 4][s],
        }
    }
}

/// Assessment schedule and reporting rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationScheme {
    /// Nominal assessment times after enrolment at 0; the last one ends follow-up.
    pub visits: Vec<f64>,
    /// Beta shape parameters of the visit-time jitter, if any.
    pub jitter: Option<(f64, f64)>,
    /// True-state transitions whose times are recorded exactly.
    pub exact: Vec<(usize, usize)>,
    /// Width of the record that precedes an exactly timed event.
    pub epsilon: f64,
    pub encoding: Encoding,
}

impl ObservationScheme {
    pub fn horizon(&self) -> f64 {
        *self.visits.last().expect("schedule has at least one visit")
    }

    pub fn validate(&self) -> Result<()> {
        if self.visits.is_empty() {
            return Err(Error::Config("observation schedule is empty".into()));
        }
        let mut prev = 0.0;
        for &v in &self.visits {
            if !(v > prev) {
                return Err(Error::Config("visit times must be positive and strictly increasing".into()));
            }
            prev = v;
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if let Some((a, b)) = self.jitter {
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::Config("jitter shapes must be positive".into()));
            }
        }
        Ok(())
    }

    /// Realised visit times: nominal time plus `(Beta - 0.5)` times the
    /// span between the neighbouring midpoints. The final visit is kept at
    /// the horizon.
    pub fn draw_visits(&self, rng: &mut SimRng) -> Vec<f64> {
        let n = self.visits.len();
        let Some((a, b)) = self.jitter else {
            return self.visits.clone();
        };
        let beta = Beta::new(a, b).expect("validated shapes");
        (0..n)
            .map(|j| {
                let t = self.visits[j];
                if j + 1 == n {
                    return t;
                }
                let prev = if j == 0 { 0.0 } else { self.visits[j - 1] };
                let lo = 0.5 * (prev + t);
                let hi = 0.5 * (t + self.visits[j + 1]);
                t + (beta.sample(rng) - 0.5) * (hi - lo)
            })
            .collect()
    }
}

/// Turns a simulated path into a subject's records.
pub fn observe_panel(
    space: &StateSpace,
    path: &SamplePath,
    id: &str,
    covariates: &Covariates,
    scheme: &ObservationScheme,
    rng: &mut SimRng,
) -> Subject {
    let visits = scheme.draw_visits(rng);
    let horizon = scheme.horizon();
    let enc = &scheme.encoding;
    let start = path.start();
    // Exactly observed events within follow-up, in time order.
    let events: Vec<(f64, usize, usize, f64)> = (1..path.states.len())
        .filter(|&i| {
            path.times[i] <= horizon && scheme.exact.contains(&(path.states[i - 1], path.states[i]))
        })
        .map(|i| (path.times[i], path.states[i - 1], path.states[i], path.times[i - 1]))
        .collect();

    let mut records = Vec::new();
    let mut last_t = start;
    let mut last_set = StateSet::single(enc.map_state(path.states[0]));
    let mut ev = events.iter().peekable();
    let mut done = false;
    let snapshot = |records: &mut Vec<Record>, last_t: &mut f64, last_set: &mut StateSet, t: f64, set: StateSet| {
        records.push(Record {
            t_start: *last_t,
            t_stop: t,
            from: *last_set,
            to: set,
            obstype: ObsType::Snapshot,
        });
        *last_t = t;
        *last_set = set;
    };
    for (j, &v) in visits.iter().enumerate() {
        while let Some(&&(te, pre, post, pre_entry)) = ev.peek() {
            if te > v {
                break;
            }
            ev.next();
            let u = (te - scheme.epsilon).max(pre_entry);
            let pre_set = StateSet::single(enc.map_state(pre));
            if u > last_t {
                snapshot(&mut records, &mut last_t, &mut last_set, u, pre_set);
            }
            let post_set = StateSet::single(enc.map_state(post));
            records.push(Record {
                t_start: last_t,
                t_stop: te,
                from: pre_set,
                to: post_set,
                obstype: ObsType::Exact,
            });
            last_t = te;
            last_set = post_set;
            if space.is_absorbing(post) {
                done = true;
                break;
            }
        }
        if done {
            break;
        }
        if v <= last_t {
            continue;
        }
        let set = encode_visit(path, enc, &visits, j, horizon);
        snapshot(&mut records, &mut last_t, &mut last_set, v, set);
        // Assay-based encodings keep visiting: final serology can still
        // resolve earlier ambiguity after the latent path is absorbed.
        if *enc == Encoding::Identity && space.is_absorbing(path.state_at(v)) {
            break;
        }
    }
    Subject {
        id: id.to_string(),
        covariates: covariates.clone(),
        records,
    }
}

fn encode_visit(path: &SamplePath, enc: &Encoding, visits: &[f64], j: usize, horizon: f64) -> StateSet {
    let t = visits[j];
    let s = path.state_at(t);
    match enc {
        Encoding::Identity => StateSet::single(s),
        Encoding::Trial9Reduced5 => {
            let pcr = |x: f64| PCR_POS.contains(&path.state_at(x));
            let symptomatic = SYMPTOMATIC.contains(&s);
            if symptomatic {
                return StateSet::single(if pcr(t) { 3 } else { 4 });
            }
            if pcr(t) {
                return StateSet::single(1);
            }
            let earlier_pcr = visits[..j].iter().any(|&x| pcr(x));
            let sero_final = SERO_POS.contains(&path.state_at(horizon));
            let last = j + 1 == visits.len();
            if earlier_pcr {
                return StateSet::single(2);
            }
            if last {
                return StateSet::single(if sero_final { 2 } else { 0 });
            }
            let later_pcr = visits[j + 1..].iter().any(|&x| pcr(x));
            let later_symptoms = path
                .entry_time(|x| SYMPTOMATIC.contains(&x))
                .is_some_and(|te| te <= horizon);
            if later_pcr || later_symptoms {
                StateSet::single(0)
            } else if sero_final {
                StateSet::from_states([0, 2])
            } else {
                StateSet::single(0)
            }
        }
    }
}

/// Covariate profile of subject `i` in a simulated cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CovariateDesign {
    None,
    /// Alternating 0/1 assignment of the named indicator.
    Alternating(String),
}

impl CovariateDesign {
    pub fn profile(&self, i: usize) -> Covariates {
        match self {
            CovariateDesign::None => Covariates::new(),
            CovariateDesign::Alternating(name) => [(name.clone(), (i % 2) as f64)].into_iter().collect(),
        }
    }
}

/// A simulated subject together with its latent path.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub subject: Subject,
    pub path: SamplePath,
}

/// Simulates and observes `n` subjects. Subject `i` uses its own random
/// streams derived from `seed`, so output does not depend on scheduling.
pub fn simulate_cohort(
    model: &SemiMarkovModel,
    theta: &[f64],
    design: &CovariateDesign,
    scheme: &ObservationScheme,
    n: usize,
    seed: u64,
) -> Result<Vec<Simulated>> {
    scheme.validate()?;
    par::try_map_indexed(n, |i| {
        let cov = design.profile(i);
        let mut r = rng::stream(seed, rng::domain::SIMULATE, i as u64);
        let path = simulate_path(model, theta, &cov, scheme.horizon(), &mut r)?;
        let mut o = rng::stream(seed, rng::domain::OBSERVE, i as u64);
        let subject = observe_panel(model.space(), &path, &format!("{:05}", i + 1), &cov, scheme, &mut o);
        Ok(Simulated { subject, path })
    })
}
