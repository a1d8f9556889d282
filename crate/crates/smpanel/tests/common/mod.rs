//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use smpanel::data::{Covariates, ObsType, Record, Subject};
use smpanel::markov::MarkovSurrogate;
use smpanel::model::{Baseline, Hazard, SemiMarkovModel};
use smpanel::state::{StateSet, StateSpace};

/// `exp(Q t)` by classical Runge-Kutta on `P' = P Q`.
pub fn rk4_expm(q: &DMatrix<f64>, t: f64, steps: usize) -> DMatrix<f64> {
    let n = q.nrows();
    let h = t / steps as f64;
    let mut p = DMatrix::identity(n, n);
    for _ in 0..steps {
        let k1 = &p * q;
        let k2 = (&p + &k1 * (h / 2.0)) * q;
        let k3 = (&p + &k2 * (h / 2.0)) * q;
        let k4 = (&p + &k3 * h) * q;
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    p
}

/// Adaptive Simpson quadrature.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64, whole: f64, m: f64, fm: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1) + rec(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

pub fn illness_death_space() -> StateSpace {
    StateSpace::numbered(3, &[(1, 2), (1, 3), (2, 3)]).unwrap()
}

pub fn exp_model(space: StateSpace) -> SemiMarkovModel {
    let n = space.n_transitions();
    SemiMarkovModel::new(space, vec![Hazard::new(Baseline::Exponential, &[]); n]).unwrap()
}

pub fn surrogate(space: StateSpace, rates: &[f64]) -> MarkovSurrogate {
    let theta = rates.iter().map(|r| r.ln()).collect();
    MarkovSurrogate::new(exp_model(space), theta).unwrap()
}

/// Generator matrix with exit rates on the diagonal.
pub fn generator(space: &StateSpace, rates: &[f64]) -> DMatrix<f64> {
    let k = space.n_states();
    let mut q = DMatrix::zeros(k, k);
    for (h, &(a, b)) in space.transitions().iter().enumerate() {
        q[(a, b)] += rates[h];
        q[(a, a)] -= rates[h];
    }
    q
}

pub fn snapshot(a: f64, b: f64, from: StateSet, to: StateSet) -> Record {
    Record {
        t_start: a,
        t_stop: b,
        from,
        to,
        obstype: ObsType::Snapshot,
    }
}

pub fn exact(a: f64, b: f64, from: usize, to: usize) -> Record {
    Record {
        t_start: a,
        t_stop: b,
        from: StateSet::single(from),
        to: StateSet::single(to),
        obstype: ObsType::Exact,
    }
}

pub fn subject(id: &str, records: Vec<Record>) -> Subject {
    Subject {
        id: id.into(),
        covariates: Covariates::new(),
        records,
    }
}

pub fn s(x: usize) -> StateSet {
    StateSet::single(x)
}

/// Probability of a snapshot-only subject by summing over every sequence
/// of boundary states, with transition matrices from [`rk4_expm`].
pub fn enumerate_likelihood(q: &DMatrix<f64>, subject: &Subject) -> f64 {
    let k = q.nrows();
    let sets = subject.boundary_sets();
    let mats: Vec<DMatrix<f64>> = subject
        .records
        .iter()
        .map(|r| rk4_expm(q, r.t_stop - r.t_start, 4000))
        .collect();
    let mut total = 0.0;
    let n = mats.len();
    let mut seq = vec![0usize; n + 1];
    loop {
        if seq.iter().zip(&sets).all(|(&x, set)| set.contains(x)) {
            let mut p = 1.0;
            for j in 0..n {
                p *= mats[j][(seq[j], seq[j + 1])];
            }
            total += p;
        }
        let mut i = 0;
        loop {
            if i > n {
                return total;
            }
            seq[i] += 1;
            if seq[i] < k {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
    }
}

/// Records that reveal a path completely: one exact record per jump and a
/// closing snapshot up to `horizon` if the path is still transient.
pub fn fully_observed(id: &str, path: &smpanel::path::SamplePath, horizon: f64, space: &StateSpace) -> Subject {
    let mut records = Vec::new();
    for i in 1..path.states.len() {
        records.push(exact(path.times[i - 1], path.times[i], path.states[i - 1], path.states[i]));
    }
    let last = *path.states.last().unwrap();
    let t = *path.times.last().unwrap();
    if !space.is_absorbing(last) && t < horizon {
        records.push(snapshot(t, horizon, s(last), s(last)));
    }
    subject(id, records)
}

/// Exact posterior over boundary-state sequences of a snapshot subject.
pub fn skeleton_posterior(q: &DMatrix<f64>, sub: &Subject) -> std::collections::HashMap<Vec<usize>, f64> {
    let k = q.nrows();
    let sets = sub.boundary_sets();
    let mats: Vec<DMatrix<f64>> = sub.records.iter().map(|r| rk4_expm(q, r.t_stop - r.t_start, 4000)).collect();
    let n = mats.len();
    let mut out = std::collections::HashMap::new();
    let total = k.pow((n + 1) as u32);
    for code in 0..total {
        let seq: Vec<usize> = (0..=n).map(|j| (code / k.pow(j as u32)) % k).collect();
        if !seq.iter().zip(&sets).all(|(&x, set)| set.contains(x)) {
            continue;
        }
        let p: f64 = (0..n).map(|j| mats[j][(seq[j], seq[j + 1])]).product();
        if p > 0.0 {
            out.insert(seq, p);
        }
    }
    let z: f64 = out.values().sum();
    out.values_mut().for_each(|v| *v /= z);
    out
}
