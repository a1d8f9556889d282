//! Model-based summaries computed from simulated cohorts.
//!
//! A [`Functional`] is an expression over per-profile path statistics, so
//! protective efficacy is written as `1 - Pr(event | treated) / Pr(event |
//! control)`. Statistics that condition on an event nobody experienced
//! evaluate to `None` rather than failing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::model::SemiMarkovModel;
use crate::par;
use crate::path::SamplePath;
use crate::rng;
use crate::simulate;
use crate::state::StateSet;

/// A property of one path over `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Event {
    /// The path occupies a state of the set at some time in follow-up.
    Ever(StateSet),
    /// The path occupies a state of the set at the given time.
    InAt(StateSet, f64),
    /// The path occupies a state of the set at one of the given times.
    InAtAny(StateSet, Vec<f64>),
    Not(Box<Event>),
    All(Vec<Event>),
}

impl Event {
    pub fn holds(&self, p: &SamplePath, horizon: f64) -> bool {
        match self {
            Event::Ever(s) => first_entry(p, *s, horizon).is_some(),
            Event::InAt(s, t) => s.contains(p.state_at(*t)),
            Event::InAtAny(s, ts) => ts.iter().any(|&t| s.contains(p.state_at(t))),
            Event::Not(e) => !e.holds(p, horizon),
            Event::All(es) => es.iter().all(|e| e.holds(p, horizon)),
        }
    }
}

/// A time-valued quantity of one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TimeValue {
    /// First entry into the set, or the horizon if it never happens.
    EntryOrHorizon(StateSet),
    /// Time spent in the set during follow-up.
    TimeIn(StateSet),
    /// From first entry into `start` to first entry into `end` or the
    /// horizon; zero if `start` is never entered.
    Between { start: StateSet, end: StateSet },
}

impl TimeValue {
    pub fn value(&self, p: &SamplePath, horizon: f64) -> f64 {
        match self {
            TimeValue::EntryOrHorizon(s) => first_entry(p, *s, horizon).unwrap_or(horizon),
            TimeValue::TimeIn(s) => {
                let mut total = 0.0;
                for i in 0..p.states.len() {
                    let a = p.times[i].min(horizon);
                    let b = if i + 1 < p.states.len() { p.times[i + 1] } else { horizon }.min(horizon);
                    if s.contains(p.states[i]) {
                        total += (b - a).max(0.0);
                    }
                }
                total
            }
            TimeValue::Between { start, end } => match first_entry(p, *start, horizon) {
                Some(t0) => {
                    let t1 = p
                        .states
                        .iter()
                        .zip(&p.times)
                        .find(|(s, t)| end.contains(**s) && **t >= t0)
                        .map(|(_, &t)| t.min(horizon))
                        .unwrap_or(horizon);
                    t1 - t0
                }
                None => 0.0,
            },
        }
    }
}

fn first_entry(p: &SamplePath, set: StateSet, horizon: f64) -> Option<f64> {
    p.entry_time(|s| set.contains(s)).filter(|&t| t <= horizon)
}

/// A statistic of the paths simulated for one covariate profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PathStat {
    Prob(Event),
    CondProb { event: Event, given: Event },
    Mean(TimeValue),
    CondMean { value: TimeValue, given: Event },
}

impl PathStat {
    pub fn evaluate(&self, paths: &[SamplePath], horizon: f64) -> Option<f64> {
        let (num, den) = match self {
            PathStat::Prob(e) => (
                paths.iter().filter(|p| e.holds(p, horizon)).count() as f64,
                paths.len() as f64,
            ),
            PathStat::CondProb { event, given } => {
                let sel: Vec<&SamplePath> = paths.iter().filter(|p| given.holds(p, horizon)).collect();
                (
                    sel.iter().filter(|p| event.holds(p, horizon)).count() as f64,
                    sel.len() as f64,
                )
            }
            PathStat::Mean(v) => (paths.iter().map(|p| v.value(p, horizon)).sum(), paths.len() as f64),
            PathStat::CondMean { value, given } => {
                let sel: Vec<&SamplePath> = paths.iter().filter(|p| given.holds(p, horizon)).collect();
                (sel.iter().map(|p| value.value(p, horizon)).sum(), sel.len() as f64)
            }
        };
        (den > 0.0).then(|| num / den)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Functional {
    Stat { stat: PathStat, profile: String },
    Ratio(Box<Functional>, Box<Functional>),
    OneMinus(Box<Functional>),
    Diff(Box<Functional>, Box<Functional>),
    Const(f64),
}

impl Functional {
    pub fn stat(stat: PathStat, profile: &str) -> Self {
        Functional::Stat {
            stat,
            profile: profile.to_string(),
        }
    }

    pub fn ratio(a: Functional, b: Functional) -> Self {
        Functional::Ratio(Box::new(a), Box::new(b))
    }

    pub fn one_minus(a: Functional) -> Self {
        Functional::OneMinus(Box::new(a))
    }

    pub fn evaluate(&self, paths: &BTreeMap<String, Vec<SamplePath>>, horizon: f64) -> Option<f64> {
        match self {
            Functional::Stat { stat, profile } => stat.evaluate(paths.get(profile)?, horizon),
            Functional::Ratio(a, b) => {
                let d = b.evaluate(paths, horizon)?;
                (d != 0.0).then_some(())?;
                Some(a.evaluate(paths, horizon)? / d)
            }
            Functional::OneMinus(a) => Some(1.0 - a.evaluate(paths, horizon)?),
            Functional::Diff(a, b) => Some(a.evaluate(paths, horizon)? - b.evaluate(paths, horizon)?),
            Functional::Const(c) => Some(*c),
        }
    }

    fn profiles(&self, out: &mut Vec<String>) {
        match self {
            Functional::Stat { profile, .. } => out.push(profile.clone()),
            Functional::Ratio(a, b) | Functional::Diff(a, b) => {
                a.profiles(out);
                b.profiles(out);
            }
            Functional::OneMinus(a) => a.profiles(out),
            Functional::Const(_) => {}
        }
    }
}

/// Named functionals sharing covariate profiles and a follow-up horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSet {
    pub horizon: f64,
    pub profiles: BTreeMap<String, Covariates>,
    pub items: Vec<(String, Functional)>,
}

impl FunctionalSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config("functional horizon must be positive".into()));
        }
        for (name, f) in &self.items {
            let mut used = Vec::new();
            f.profiles(&mut used);
            if let Some(p) = used.iter().find(|p| !self.profiles.contains_key(*p)) {
                return Err(Error::Config(format!("functional '{name}' uses unknown profile '{p}'")));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, paths: &BTreeMap<String, Vec<SamplePath>>) -> Vec<(String, Option<f64>)> {
        self.items
            .iter()
            .map(|(n, f)| (n.clone(), f.evaluate(paths, self.horizon)))
            .collect()
    }
}

/// Simulates `n_sim` paths per profile. The same `seed` gives the same
/// random numbers for every parameter value (common random numbers).
pub fn simulate_profiles(
    model: &SemiMarkovModel,
    theta: &[f64],
    set: &FunctionalSet,
    n_sim: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<SamplePath>>> {
    let mut out = BTreeMap::new();
    for (pi, (name, cov)) in set.profiles.iter().enumerate() {
        let paths = par::try_map_indexed(n_sim, |j| {
            let mut r = rng::stream(seed, rng::domain::FUNCTIONAL, (pi * n_sim + j) as u64);
            simulate::simulate_path(model, theta, cov, set.horizon, &mut r)
        })?;
        out.insert(name.clone(), paths);
    }
    Ok(out)
}

/// Simulates from the model and evaluates every functional.
pub fn estimate_functionals(
    model: &SemiMarkovModel,
    theta: &[f64],
    set: &FunctionalSet,
    n_sim: usize,
    seed: u64,
) -> Result<Vec<(String, Option<f64>)>> {
    if n_sim == 0 {
        return Err(Error::Domain("n_sim must be at least 1".into()));
    }
    set.validate()?;
    let paths = simulate_profiles(model, theta, set, n_sim, seed)?;
    Ok(set.evaluate(&paths))
}

/// Two-stage seroconversion estimate: observed count over model-estimated
/// number infected. Values above one are possible and flagged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: Option<f64>,
    pub exceeds_one: bool,
}

pub fn seroconversion_ratio(observed: f64, estimated: f64) -> Ratio {
    if estimated > 0.0 {
        let v = observed / estimated;
        Ratio {
            value: Some(v),
            exceeds_one: v > 1.0,
        }
    } else {
        Ratio {
            value: None,
            exceeds_one: false,
        }
    }
}

/// `(V_A, V_S, V)` from observed seroconversion counts and the estimated
/// numbers of asymptomatic, symptomatic and all infections.
pub fn seroconversion_two_stage(c_a: f64, c_s: f64, i_a: f64, i_s: f64, i: f64) -> [Ratio; 3] {
    [
        seroconversion_ratio(c_a, i_a),
        seroconversion_ratio(c_s, i_s),
        seroconversion_ratio(c_a + c_s, i),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(times: &[f64], states: &[usize]) -> SamplePath {
        SamplePath {
            times: times.to_vec(),
            states: states.to_vec(),
            end: 1.0,
        }
    }

    #[test]
    fn illness_death_statistics() {
        let p1 = path(&[0.0, 0.2, 0.5], &[0, 1, 2]);
        let p2 = path(&[0.0, 0.4], &[0, 2]);
        let p3 = path(&[0.0], &[0]);
        let paths = vec![p1, p2, p3];
        let ill = StateSet::single(1);
        let dead = StateSet::single(2);
        let rfst = PathStat::Mean(TimeValue::EntryOrHorizon(ill.union(dead)));
        assert!((rfst.evaluate(&paths, 1.0).unwrap() - (0.2 + 0.4 + 1.0) / 3.0).abs() < 1e-12);
        let ttd = PathStat::CondMean {
            value: TimeValue::Between { start: ill, end: dead },
            given: Event::Ever(ill),
        };
        assert!((ttd.evaluate(&paths, 1.0).unwrap() - 0.3).abs() < 1e-12);
        let none = PathStat::CondProb {
            event: Event::Ever(dead),
            given: Event::InAt(ill, 0.1),
        };
        assert_eq!(none.evaluate(&paths, 1.0), None);
    }

    #[test]
    fn efficacy_is_one_minus_ratio() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![path(&[0.0, 0.5], &[0, 1]), path(&[0.0], &[0])]);
        m.insert("b".to_string(), vec![path(&[0.0, 0.5], &[0, 1]), path(&[0.0, 0.2], &[0, 1])]);
        let p = |prof: &str| Functional::stat(PathStat::Prob(Event::Ever(StateSet::single(1))), prof);
        let rr = Functional::ratio(p("a"), p("b"));
        let pe = Functional::one_minus(rr.clone());
        let (r, e) = (rr.evaluate(&m, 1.0).unwrap(), pe.evaluate(&m, 1.0).unwrap());
        assert_eq!(e, 1.0 - r);
        assert_eq!(Functional::Const(2.0).evaluate(&m, 1.0), Some(2.0));
    }

    #[test]
    fn seroconversion() {
        assert_eq!(seroconversion_ratio(50.0, 100.0).value, Some(0.5));
        assert_eq!(seroconversion_ratio(0.0, 10.0).value, Some(0.0));
        assert_eq!(seroconversion_ratio(3.0, 0.0).value, None);
        assert!(seroconversion_ratio(12.0, 10.0).exceeds_one);
    }
}
