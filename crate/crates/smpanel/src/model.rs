//! Semi-Markov transition intensities and complete-path likelihoods.
//!
//! Every transition `h = (k, l)` has intensity `eta_h(t) * exp(x_h' beta_h)`
//! where `t` is the time since entry into `k`. Baseline parameters are kept
//! on the log scale inside the flat parameter vector `theta`; regression
//! coefficients are unconstrained.
//!
//! Layout of `theta`, transition by transition in the order of
//! [`StateSpace::transitions`]:
//!
//! | family      | baseline block                       |
//! |-------------|--------------------------------------|
//! | exponential | `log rate`                           |
//! | Weibull     | `log scale`, `log shape`             |
//! | B-spline    | `log coef_1`, ..., `log coef_B`      |
//!
//! followed by one coefficient per covariate of that transition.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::path::{SamplePath, Segment};
use crate::spline::{BSplineBasis, MAX_BASIS};
use crate::state::StateSpace;

#[derive(Clone, Debug, PartialEq)]
pub enum Baseline {
    Exponential,
    Weibull,
    BSpline(BSplineBasis),
}

impl Baseline {
    pub fn n_params(&self) -> usize {
        match self {
            Baseline::Exponential => 1,
            Baseline::Weibull => 2,
            Baseline::BSpline(b) => b.n_basis(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Baseline::Exponential => "exponential",
            Baseline::Weibull => "weibull",
            Baseline::BSpline(_) => "bspline",
        }
    }

    fn param_names(&self) -> Vec<String> {
        match self {
            Baseline::Exponential => vec!["log_rate".into()],
            Baseline::Weibull => vec!["log_scale".into(), "log_shape".into()],
            Baseline::BSpline(b) => (1..=b.n_basis()).map(|i| format!("log_coef{i}")).collect(),
        }
    }
}

/// Baseline family and covariate list of one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Hazard {
    pub baseline: Baseline,
    pub covariates: Vec<String>,
}

impl Hazard {
    pub fn new(baseline: Baseline, covariates: &[&str]) -> Self {
        Hazard {
            baseline,
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Covariate vectors resolved per transition for one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    x: Vec<Vec<f64>>,
}

impl Design {
    pub fn row(&self, h: usize) -> &[f64] {
        &self.x[h]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemiMarkovModel {
    space: StateSpace,
    hazards: Vec<Hazard>,
    base_offset: Vec<usize>,
    beta_offset: Vec<usize>,
    n_params: usize,
}

impl SemiMarkovModel {
    /// `hazards[h]` describes transition `space.transitions()[h]`.
    pub fn new(space: StateSpace, hazards: Vec<Hazard>) -> Result<Self> {
        if hazards.len() != space.n_transitions() {
            return Err(Error::Config(format!(
                "{} hazards given for {} transitions",
                hazards.len(),
                space.n_transitions()
            )));
        }
        let mut base_offset = Vec::with_capacity(hazards.len());
        let mut beta_offset = Vec::with_capacity(hazards.len());
        let mut n = 0;
        for hz in &hazards {
            base_offset.push(n);
            n += hz.baseline.n_params();
            beta_offset.push(n);
            n += hz.covariates.len();
        }
        Ok(SemiMarkovModel {
            space,
            hazards,
            base_offset,
            beta_offset,
            n_params: n,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn hazards(&self) -> &[Hazard] {
        &self.hazards
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn base_range(&self, h: usize) -> Range<usize> {
        self.base_offset[h]..self.beta_offset[h]
    }

    pub fn beta_range(&self, h: usize) -> Range<usize> {
        self.beta_offset[h]..self.beta_offset[h] + self.hazards[h].covariates.len()
    }

    /// Names like `1->2:log_scale` or `1->2:beta_trt`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_params);
        for (h, &(a, b)) in self.space.transitions().iter().enumerate() {
            let tag = format!("{}->{}", a + 1, b + 1);
            for p in self.hazards[h].baseline.param_names() {
                names.push(format!("{tag}:{p}"));
            }
            for c in &self.hazards[h].covariates {
                names.push(format!("{tag}:beta_{c}"));
            }
        }
        names
    }

    /// Whether parameter `i` is a log-transformed positive quantity.
    pub fn is_log_scale(&self, i: usize) -> bool {
        (0..self.hazards.len()).any(|h| self.base_range(h).contains(&i))
    }

    /// Maps unconstrained `theta` to the natural scale (rates, shapes, coefficients, betas).
    pub fn to_natural(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.is_log_scale(i) { v.exp() } else { v })
            .collect()
    }

    pub fn from_natural(&self, natural: &[f64]) -> Result<Vec<f64>> {
        if natural.len() != self.n_params {
            return Err(Error::Domain(format!(
                "expected {} parameters, got {}",
                self.n_params,
                natural.len()
            )));
        }
        natural
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if self.is_log_scale(i) {
                    if v > 0.0 {
                        Ok(v.ln())
                    } else {
                        Err(Error::Domain(format!("parameter {i} must be positive, got {v}")))
                    }
                } else {
                    Ok(v)
                }
            })
            .collect()
    }

    pub fn is_exponential(&self) -> bool {
        self.hazards.iter().all(|h| matches!(h.baseline, Baseline::Exponential))
    }

    /// Same graph and covariates with exponential baselines: the Markov surrogate's structure.
    pub fn exponential_analogue(&self) -> SemiMarkovModel {
        let hazards = self
            .hazards
            .iter()
            .map(|h| Hazard {
                baseline: Baseline::Exponential,
                covariates: h.covariates.clone(),
            })
            .collect();
        SemiMarkovModel::new(self.space.clone(), hazards).expect("same shape as a valid model")
    }

    /// Starting values implied by a fitted exponential analogue: Weibull
    /// shape 1 with scale equal to the rate, spline coefficients all equal
    /// to the rate, and the same regression coefficients.
    pub fn init_from_markov(&self, markov_theta: &[f64]) -> Vec<f64> {
        let markov = self.exponential_analogue();
        let mut theta = vec![0.0; self.n_params];
        for h in 0..self.hazards.len() {
            let log_rate = markov_theta[markov.base_range(h).start];
            let r = self.base_range(h);
            match &self.hazards[h].baseline {
                Baseline::Exponential => theta[r.start] = log_rate,
                Baseline::Weibull => {
                    theta[r.start] = log_rate;
                    theta[r.start + 1] = 0.0;
                }
                Baseline::BSpline(_) => theta[r].fill(log_rate),
            }
            let src = markov.beta_range(h);
            let dst = self.beta_range(h);
            theta[dst].copy_from_slice(&markov_theta[src]);
        }
        theta
    }

    /// All covariate names used by any transition, sorted and deduplicated.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.hazards.iter().flat_map(|h| h.covariates.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn design(&self, covariates: &Covariates) -> Result<Design> {
        let x = self
            .hazards
            .iter()
            .map(|hz| {
                hz.covariates
                    .iter()
                    .map(|c| {
                        covariates.get(c).copied().ok_or_else(|| {
                            Error::Config(format!("unknown covariate '{c}' referenced by the model"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Design { x })
    }

    pub fn evaluator<'a>(&'a self, theta: &'a [f64], design: &'a Design) -> HazardEval<'a> {
        HazardEval::new(self, theta, design)
    }

    /// Intensity of transition `h` after `sojourn` time units in its origin state.
    pub fn intensity(&self, h: usize, sojourn: f64, covariates: &Covariates, theta: &[f64]) -> Result<f64> {
        check_sojourn(sojourn)?;
        let d = self.design(covariates)?;
        Ok(self.evaluator(theta, &d).intensity(h, sojourn))
    }

    /// Integrated intensity of transition `h` over sojourn times `[t0, t1]`.
    pub fn cumulative_hazard(
        &self,
        h: usize,
        t0: f64,
        t1: f64,
        covariates: &Covariates,
        theta: &[f64],
    ) -> Result<f64> {
        check_sojourn(t0)?;
        if t1 < t0 {
            return Err(Error::Domain(format!("t1 = {t1} precedes t0 = {t0}")));
        }
        let d = self.design(covariates)?;
        Ok(self.evaluator(theta, &d).cumhaz(h, t0, t1))
    }

    /// Probability of staying in `state` for at least `sojourn`.
    pub fn survival_prob(&self, state: usize, sojourn: f64, covariates: &Covariates, theta: &[f64]) -> Result<f64> {
        check_sojourn(sojourn)?;
        let d = self.design(covariates)?;
        Ok(self.evaluator(theta, &d).survival(state, sojourn))
    }

    /// Complete-path log-likelihood with a known initial state.
    pub fn path_loglik(&self, path: &SamplePath, covariates: &Covariates, theta: &[f64]) -> Result<f64> {
        path.validate(&self.space)?;
        let d = self.design(covariates)?;
        Ok(self.evaluator(theta, &d).path_loglik(path))
    }
}

fn check_sojourn(t: f64) -> Result<()> {
    if t < 0.0 || !t.is_finite() {
        Err(Error::Domain(format!("sojourn time must be finite and nonnegative, got {t}")))
    } else {
        Ok(())
    }
}

/// Per-transition quantities precomputed for one `(theta, design)` pair.
#[derive(Clone, Debug)]
struct TransitionCache {
    /// `exp(x' beta)`
    mult: f64,
    /// `x' beta`
    lp: f64,
    /// Exponential rate or Weibull scale, natural scale.
    scale: f64,
    log_scale: f64,
    shape: f64,
    coefs: Vec<f64>,
}

/// Fast evaluation of intensities and path likelihoods at fixed parameters.
pub struct HazardEval<'a> {
    model: &'a SemiMarkovModel,
    design: &'a Design,
    cache: Vec<TransitionCache>,
}

type Square = [[f64; MAX_BASIS]; MAX_BASIS];

fn clear_block(m: &mut Square, n: usize) {
    for row in m.iter_mut().take(n) {
        row[..n].fill(0.0);
    }
}

impl<'a> HazardEval<'a> {
    pub fn new(model: &'a SemiMarkovModel, theta: &'a [f64], design: &'a Design) -> Self {
        assert_eq!(theta.len(), model.n_params, "parameter vector length mismatch");
        let cache = (0..model.hazards.len())
            .map(|h| {
                let x = design.row(h);
                let beta = &theta[model.beta_range(h)];
                let lp: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
                let base = &theta[model.base_range(h)];
                let (log_scale, shape, coefs) = match &model.hazards[h].baseline {
                    Baseline::Exponential => (base[0], 1.0, Vec::new()),
                    Baseline::Weibull => (base[0], base[1].exp(), Vec::new()),
                    Baseline::BSpline(_) => (0.0, 1.0, base.iter().map(|c| c.exp()).collect()),
                };
                TransitionCache {
                    mult: lp.exp(),
                    lp,
                    scale: log_scale.exp(),
                    log_scale,
                    shape,
                    coefs,
                }
            })
            .collect();
        HazardEval { model, design, cache }
    }

    pub fn model(&self) -> &SemiMarkovModel {
        self.model
    }

    /// Baseline intensity `eta_h(t)` without covariate effects.
    fn baseline(&self, h: usize, t: f64) -> f64 {
        let c = &self.cache[h];
        match &self.model.hazards[h].baseline {
            Baseline::Exponential => c.scale,
            Baseline::Weibull => {
                if t > 0.0 {
                    c.scale * c.shape * t.powf(c.shape - 1.0)
                } else if c.shape < 1.0 {
                    f64::INFINITY
                } else if c.shape == 1.0 {
                    c.scale
                } else {
                    0.0
                }
            }
            Baseline::BSpline(b) => {
                let mut v = [0.0; MAX_BASIS];
                let n = b.n_basis();
                b.eval(t, &mut v[..n]);
                c.coefs.iter().zip(&v[..n]).map(|(g, x)| g * x).sum()
            }
        }
    }

    /// Baseline cumulative intensity over `[0, t]`.
    fn baseline_cum(&self, h: usize, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let c = &self.cache[h];
        match &self.model.hazards[h].baseline {
            Baseline::Exponential => c.scale * t,
            Baseline::Weibull => c.scale * t.powf(c.shape),
            Baseline::BSpline(b) => {
                let mut v = [0.0; MAX_BASIS];
                let n = b.n_basis();
                b.integral(t, &mut v[..n]);
                c.coefs.iter().zip(&v[..n]).map(|(g, x)| g * x).sum()
            }
        }
    }

    pub fn intensity(&self, h: usize, t: f64) -> f64 {
        self.baseline(h, t) * self.cache[h].mult
    }

    pub fn log_intensity(&self, h: usize, t: f64) -> f64 {
        let c = &self.cache[h];
        match &self.model.hazards[h].baseline {
            Baseline::Exponential => c.log_scale + c.lp,
            Baseline::Weibull if t > 0.0 => {
                c.log_scale + c.shape.ln() + (c.shape - 1.0) * t.ln() + c.lp
            }
            _ => self.baseline(h, t).ln() + c.lp,
        }
    }

    /// Linear predictor `x' beta` of transition `h`.
    pub fn linear_predictor(&self, h: usize) -> f64 {
        self.cache[h].lp
    }

    /// Cumulative intensity of `h` over sojourn times `[t0, t1]`.
    pub fn cumhaz(&self, h: usize, t0: f64, t1: f64) -> f64 {
        (self.baseline_cum(h, t1) - self.baseline_cum(h, t0)) * self.cache[h].mult
    }

    pub fn total_intensity(&self, state: usize, t: f64) -> f64 {
        self.model.space.exits(state).iter().map(|&h| self.intensity(h, t)).sum()
    }

    pub fn total_cumhaz(&self, state: usize, t: f64) -> f64 {
        self.model.space.exits(state).iter().map(|&h| self.cumhaz(h, 0.0, t)).sum()
    }

    pub fn survival(&self, state: usize, t: f64) -> f64 {
        (-self.total_cumhaz(state, t)).exp()
    }

    /// Exponential rate or Weibull scale of transition `h` (natural scale).
    pub fn scale(&self, h: usize) -> f64 {
        self.cache[h].scale
    }

    pub fn shape(&self, h: usize) -> f64 {
        self.cache[h].shape
    }

    pub fn multiplier(&self, h: usize) -> f64 {
        self.cache[h].mult
    }

    pub fn segment_loglik(&self, seg: &Segment) -> f64 {
        let mut ll = -self.total_cumhaz(seg.from, seg.sojourn);
        if let Some(to) = seg.to {
            let h = self
                .model
                .space
                .transition_index(seg.from, to)
                .expect("segment follows an allowed transition");
            ll += self.log_intensity(h, seg.sojourn);
        }
        ll
    }

    pub fn path_loglik(&self, path: &SamplePath) -> f64 {
        path.segments(&self.model.space).map(|s| self.segment_loglik(&s)).sum()
    }

    /// Value, gradient and (optionally) Hessian of `log eta_h(t)` with
    /// respect to the baseline block of transition `h`.
    fn event_base_derivs(&self, h: usize, t: f64, grad: &mut [f64; MAX_BASIS], hess: Option<&mut Square>) -> f64 {
        let c = &self.cache[h];
        let n = self.model.hazards[h].baseline.n_params();
        let mut hess = hess;
        if let Some(m) = hess.as_deref_mut() {
            clear_block(m, n);
        }
        match &self.model.hazards[h].baseline {
            Baseline::Exponential => {
                grad[0] = 1.0;
                c.log_scale
            }
            Baseline::Weibull => {
                let lt = t.ln();
                grad[0] = 1.0;
                grad[1] = 1.0 + c.shape * lt;
                if let Some(m) = hess {
                    m[1][1] = c.shape * lt;
                }
                c.log_scale + c.shape.ln() + (c.shape - 1.0) * lt
            }
            Baseline::BSpline(b) => {
                let mut v = [0.0; MAX_BASIS];
                b.eval(t, &mut v[..n]);
                let eta: f64 = (0..n).map(|l| c.coefs[l] * v[l]).sum();
                for l in 0..n {
                    grad[l] = c.coefs[l] * v[l] / eta;
                }
                if let Some(m) = hess {
                    for l in 0..n {
                        for k in 0..n {
                            m[l][k] = -grad[l] * grad[k];
                        }
                        m[l][l] += grad[l];
                    }
                }
                eta.ln()
            }
        }
    }

    /// Value, gradient and (optionally) Hessian of the baseline cumulative
    /// intensity `H_h(t)` with respect to the baseline block of `h`.
    fn cum_base_derivs(&self, h: usize, t: f64, grad: &mut [f64; MAX_BASIS], hess: Option<&mut Square>) -> f64 {
        let c = &self.cache[h];
        let n = self.model.hazards[h].baseline.n_params();
        grad[..n].fill(0.0);
        let mut hess = hess;
        if let Some(m) = hess.as_deref_mut() {
            clear_block(m, n);
        }
        if t <= 0.0 {
            return 0.0;
        }
        match &self.model.hazards[h].baseline {
            Baseline::Exponential => {
                let v = c.scale * t;
                grad[0] = v;
                if let Some(m) = hess {
                    m[0][0] = v;
                }
                v
            }
            Baseline::Weibull => {
                let v = c.scale * t.powf(c.shape);
                let l = c.shape * t.ln();
                grad[0] = v;
                grad[1] = v * l;
                if let Some(m) = hess {
                    m[0][0] = v;
                    m[0][1] = v * l;
                    m[1][0] = v * l;
                    m[1][1] = v * (l + l * l);
                }
                v
            }
            Baseline::BSpline(b) => {
                let mut v = [0.0; MAX_BASIS];
                b.integral(t, &mut v[..n]);
                for l in 0..n {
                    grad[l] = c.coefs[l] * v[l];
                }
                if let Some(m) = hess {
                    for l in 0..n {
                        m[l][l] = grad[l];
                    }
                }
                grad[..n].iter().sum()
            }
        }
    }

    /// Adds `weight` times the gradient (and optionally Hessian) of the
    /// path log-likelihood with respect to unconstrained parameters.
    /// Returns the weighted log-likelihood contribution.
    pub fn accumulate_derivatives(
        &self,
        path: &SamplePath,
        weight: f64,
        grad: &mut [f64],
        mut hess: Option<&mut DMatrix<f64>>,
    ) -> f64 {
        let space = &self.model.space;
        let need_hess = hess.is_some();
        let mut g = [0.0; MAX_BASIS];
        let mut local: Box<Square> = Box::new([[0.0; MAX_BASIS]; MAX_BASIS]);
        let mut total = 0.0;
        for seg in path.segments(space) {
            if let Some(to) = seg.to {
                let h = space.transition_index(seg.from, to).expect("allowed transition");
                let value = self.event_base_derivs(h, seg.sojourn, &mut g, need_hess.then_some(&mut *local));
                let c = &self.cache[h];
                total += weight * (value + c.lp);
                let br = self.model.base_range(h);
                let xr = self.model.beta_range(h);
                let x = self.design.row(h);
                for (l, i) in br.clone().enumerate() {
                    grad[i] += weight * g[l];
                }
                for (j, i) in xr.enumerate() {
                    grad[i] += weight * x[j];
                }
                if let Some(hm) = hess.as_deref_mut() {
                    for (l, i) in br.clone().enumerate() {
                        for (m, k) in br.clone().enumerate() {
                            hm[(i, k)] += weight * local[l][m];
                        }
                    }
                }
            }
            for &h in space.exits(seg.from) {
                let value = self.cum_base_derivs(h, seg.sojourn, &mut g, need_hess.then_some(&mut *local));
                let c = &self.cache[h];
                let cv = c.mult * value;
                total -= weight * cv;
                let br = self.model.base_range(h);
                let xr = self.model.beta_range(h);
                let x = self.design.row(h);
                for (l, i) in br.clone().enumerate() {
                    grad[i] -= weight * c.mult * g[l];
                }
                for (j, i) in xr.clone().enumerate() {
                    grad[i] -= weight * cv * x[j];
                }
                if let Some(hm) = hess.as_deref_mut() {
                    for (l, i) in br.clone().enumerate() {
                        for (m, k) in br.clone().enumerate() {
                            hm[(i, k)] -= weight * c.mult * local[l][m];
                        }
                        for (j, k) in xr.clone().enumerate() {
                            let v = weight * c.mult * g[l] * x[j];
                            hm[(i, k)] -= v;
                            hm[(k, i)] -= v;
                        }
                    }
                    for (j, i) in xr.clone().enumerate() {
                        for (m, k) in xr.clone().enumerate() {
                            hm[(i, k)] -= weight * cv * x[j] * x[m];
                        }
                    }
                }
            }
        }
        total
    }
}
