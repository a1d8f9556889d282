//! Built-in simulation studies with their generating parameters,
//! observation schemes and reference values of the path functionals.

use std::collections::BTreeMap;

use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::functional::{Event, Functional, FunctionalSet, PathStat, TimeValue};
use crate::model::{Baseline, Hazard, SemiMarkovModel};
use crate::simulate::{self, CovariateDesign, Encoding, ObservationScheme, Simulated};
use crate::spline::BSplineBasis;
use crate::state::{StateSet, StateSpace};

/// Names accepted by [`lookup`].
pub const NAMES: [&str; 7] = [
    "illness_death",
    "illness_death_monthly",
    "illness_death_panel5",
    "exp_illness_death",
    "weibull_shape25",
    "trial9",
    "trial9_reduced5",
];

/// A complete simulation design.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: &'static str,
    pub description: &'static str,
    pub model: SemiMarkovModel,
    pub theta: Vec<f64>,
    pub design: CovariateDesign,
    pub scheme: ObservationScheme,
    pub default_n: usize,
    /// Functionals of the generating model.
    pub functionals: FunctionalSet,
    /// Reference values of named functionals.
    pub truths: Vec<(&'static str, f64)>,
}

impl Scenario {
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Vec<Simulated>> {
        simulate::simulate_cohort(&self.model, &self.theta, &self.design, &self.scheme, n, seed)
    }

    pub fn truth(&self, name: &str) -> Option<f64> {
        self.truths.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

pub fn lookup(name: &str) -> Result<Scenario> {
    match name {
        "illness_death" => Ok(illness_death(quarterly(1.0), "Weibull illness-death, quarterly visits")),
        "illness_death_monthly" => Ok(illness_death(
            (1..=12).map(|m| m as f64 / 12.0).collect(),
            "Weibull illness-death, monthly visits",
        )),
        "illness_death_panel5" => Ok(illness_death_panel5()),
        "exp_illness_death" => Ok(exp_illness_death()),
        "weibull_shape25" => Ok(weibull_shape25()),
        "trial9" => trial9(Encoding::Identity),
        "trial9_reduced5" => trial9(Encoding::Trial9Reduced5),
        other => Err(Error::Config(format!(
            "unknown scenario '{other}'; available: {}",
            NAMES.join(", ")
        ))),
    }
}

fn quarterly(horizon: f64) -> Vec<f64> {
    let n = (horizon * 4.0).round() as usize;
    (1..=n).map(|q| q as f64 / 4.0).collect()
}

fn illness_death_space() -> StateSpace {
    StateSpace::new(
        vec!["healthy".into(), "ill".into(), "dead".into()],
        vec![(0, 1), (0, 2), (1, 2)],
    )
    .expect("valid illness-death graph")
}

/// Illness-death model with the given baselines and no covariates.
pub fn illness_death_model(baselines: [Baseline; 3]) -> SemiMarkovModel {
    let hazards = baselines.into_iter().map(|b| Hazard::new(b, &[])).collect();
    SemiMarkovModel::new(illness_death_space(), hazards).expect("valid illness-death model")
}

/// Relapse-free survival type summaries over one year.
pub fn illness_death_functionals(horizon: f64) -> FunctionalSet {
    let ill = StateSet::single(1);
    let dead = StateSet::single(2);
    let stat = |s| Functional::stat(s, "all");
    FunctionalSet {
        horizon,
        profiles: [("all".to_string(), Covariates::new())].into_iter().collect(),
        items: vec![
            ("pr_rfs".into(), stat(PathStat::Prob(Event::InAt(StateSet::single(0), horizon)))),
            ("pr_recurrence".into(), stat(PathStat::Prob(Event::Ever(ill)))),
            (
                "pr_death_with_recurrence".into(),
                stat(PathStat::Prob(Event::All(vec![Event::Ever(ill), Event::Ever(dead)]))),
            ),
            (
                "pr_death_without_recurrence".into(),
                stat(PathStat::Prob(Event::All(vec![
                    Event::Not(Box::new(Event::Ever(ill))),
                    Event::Ever(dead),
                ]))),
            ),
            ("rm_rfst".into(), stat(PathStat::Mean(TimeValue::EntryOrHorizon(ill.union(dead))))),
            (
                "ttr_given_recurrence".into(),
                stat(PathStat::CondMean {
                    value: TimeValue::EntryOrHorizon(ill),
                    given: Event::Ever(ill),
                }),
            ),
            ("rm_ttr_or_eof".into(), stat(PathStat::Mean(TimeValue::EntryOrHorizon(ill)))),
            (
                "rm_ttd_given_recurrence".into(),
                stat(PathStat::CondMean {
                    value: TimeValue::Between { start: ill, end: dead },
                    given: Event::Ever(ill),
                }),
            ),
        ],
    }
}

/// Generating log-parameters of the Weibull illness-death study: scales
/// 1.5, 1 and 2 with common shape 1.25.
pub fn illness_death_theta() -> Vec<f64> {
    let k = 1.25f64.ln();
    vec![1.5f64.ln(), k, 0.0, k, 2.0f64.ln(), k]
}

fn illness_death_truths() -> Vec<(&'static str, f64)> {
    vec![
        ("pr_rfs", 0.082),
        ("pr_recurrence", 0.551),
        ("pr_death_with_recurrence", 0.349),
        ("pr_death_without_recurrence", 0.367),
        ("rm_rfst", 0.423),
        ("ttr_given_recurrence", 0.371),
        ("rm_ttr_or_eof", 0.654),
        ("rm_ttd_given_recurrence", 0.378),
    ]
}

fn illness_death(visits: Vec<f64>, description: &'static str) -> Scenario {
    Scenario {
        name: if visits.len() == 4 { "illness_death" } else { "illness_death_monthly" },
        description,
        model: illness_death_model([Baseline::Weibull, Baseline::Weibull, Baseline::Weibull]),
        theta: illness_death_theta(),
        design: CovariateDesign::None,
        scheme: ObservationScheme {
            visits,
            jitter: Some((1.5, 1.5)),
            exact: vec![(0, 2), (1, 2)],
            epsilon: 1.0 / 365.0,
            encoding: Encoding::Identity,
        },
        default_n: 250,
        functionals: illness_death_functionals(1.0),
        truths: illness_death_truths(),
    }
}

fn illness_death_panel5() -> Scenario {
    Scenario {
        name: "illness_death_panel5",
        description: "Weibull illness-death, five panel assessments, death not timed",
        scheme: ObservationScheme {
            visits: (1..=5).map(|j| j as f64 / 5.0).collect(),
            jitter: Some((1.5, 1.5)),
            exact: vec![],
            epsilon: 1.0 / 365.0,
            encoding: Encoding::Identity,
        },
        default_n: 500,
        ..illness_death(quarterly(1.0), "")
    }
}

fn exp_illness_death() -> Scenario {
    Scenario {
        name: "exp_illness_death",
        description: "Markov illness-death with rates 1, 0.4 and 0.8, quarterly visits",
        model: illness_death_model([Baseline::Exponential, Baseline::Exponential, Baseline::Exponential]),
        theta: vec![1.0f64.ln(), 0.4f64.ln(), 0.8f64.ln()],
        default_n: 500,
        truths: vec![],
        ..illness_death(quarterly(1.0), "")
    }
}

/// Weibull shape 2.5 onset with exponential death rates 0.15 and 0.5.
fn weibull_shape25() -> Scenario {
    Scenario {
        name: "weibull_shape25",
        description: "illness-death with Weibull(shape 2.5) onset, quarterly visits over two years",
        model: illness_death_model([Baseline::Weibull, Baseline::Exponential, Baseline::Exponential]),
        theta: vec![0.5f64.ln(), 2.5f64.ln(), 0.15f64.ln(), 0.5f64.ln()],
        design: CovariateDesign::None,
        scheme: ObservationScheme {
            visits: quarterly(2.0),
            jitter: Some((1.5, 1.5)),
            exact: vec![(0, 2), (1, 2)],
            epsilon: 1.0 / 365.0,
            encoding: Encoding::Identity,
        },
        default_n: 1000,
        functionals: illness_death_functionals(2.0),
        truths: vec![],
    }
}

/// Nine-state infection model: naive, PCR+/- crossed with seropositivity,
/// with and without symptoms.
pub fn trial9_space() -> StateSpace {
    let names = [
        "naive",
        "pcr_pos",
        "pcr_pos_sero",
        "pcr_neg",
        "pcr_neg_sero",
        "sympt_pcr_pos",
        "sympt_pcr_pos_sero",
        "sympt_pcr_neg",
        "sympt_pcr_neg_sero",
    ];
    StateSpace::new(
        names.iter().map(|s| s.to_string()).collect(),
        vec![(0, 1), (1, 2), (1, 3), (2, 4), (3, 4), (1, 5), (5, 6), (5, 7), (6, 8), (7, 8)],
    )
    .expect("valid nine-state graph")
}

/// `(baseline, natural parameters, treatment effect)` per transition.
fn trial9_truth() -> Vec<(Baseline, Vec<f64>, f64)> {
    use Baseline::{Exponential as E, Weibull as W};
    vec![
        (W, vec![0.6, 0.7], 0.33f64.ln()),
        (E, vec![0.2], 0.5f64.ln()),
        (E, vec![0.3], 0.0),
        (E, vec![0.3], 0.0),
        (E, vec![0.25], 0.5f64.ln()),
        (W, vec![1.0, 1.5], 0.4f64.ln()),
        (E, vec![1.0], 0.5f64.ln()),
        (E, vec![0.5], 0.0),
        (E, vec![0.5], 0.0),
        (E, vec![1.0], 0.5f64.ln()),
    ]
}

fn profiles() -> BTreeMap<String, Covariates> {
    [
        ("placebo".to_string(), [("trt".to_string(), 0.0)].into_iter().collect()),
        ("mab".to_string(), [("trt".to_string(), 1.0)].into_iter().collect()),
    ]
    .into_iter()
    .collect()
}

fn infection_functionals(horizon: f64, infected: StateSet, sympt: StateSet, pcr: StateSet, sero: Option<StateSet>) -> FunctionalSet {
    let weekly: Vec<f64> = (1..=horizon.floor() as usize).map(|w| w as f64).collect();
    let mut items = Vec::new();
    let inf = Event::Ever(infected);
    let sym = Event::Ever(sympt);
    let asym = Event::All(vec![inf.clone(), Event::Not(Box::new(sym.clone()))]);
    for arm in ["placebo", "mab"] {
        let s = |stat| Functional::stat(stat, arm);
        items.push((format!("pr_infec_{arm}"), s(PathStat::Prob(inf.clone()))));
        items.push((format!("pr_sympt_{arm}"), s(PathStat::Prob(sym.clone()))));
        items.push((format!("pr_asympt_{arm}"), s(PathStat::Prob(asym.clone()))));
        items.push((format!("rm_ti_{arm}"), s(PathStat::Mean(TimeValue::EntryOrHorizon(infected)))));
        items.push((
            format!("rm_pcr_{arm}"),
            s(PathStat::CondMean {
                value: TimeValue::TimeIn(pcr),
                given: inf.clone(),
            }),
        ));
        items.push((
            format!("pr_detected_{arm}"),
            s(PathStat::CondProb {
                event: Event::InAtAny(pcr, weekly.clone()),
                given: inf.clone(),
            }),
        ));
        if let Some(sero) = sero {
            items.push((
                format!("pr_sero_given_infec_{arm}"),
                s(PathStat::CondProb {
                    event: Event::InAt(sero, horizon),
                    given: inf.clone(),
                }),
            ));
        }
    }
    for (what, ev) in [("infec", &inf), ("sympt", &sym), ("asympt", &asym)] {
        let p = |arm| Functional::stat(PathStat::Prob(ev.clone()), arm);
        items.push((format!("pe_{what}"), Functional::one_minus(Functional::ratio(p("mab"), p("placebo")))));
    }
    FunctionalSet {
        horizon,
        profiles: profiles(),
        items,
    }
}

/// Functionals of the nine-state model over four weeks.
pub fn trial9_functionals() -> FunctionalSet {
    infection_functionals(
        4.0,
        StateSet::from_states(1..9),
        StateSet::from_states([5, 6, 7, 8]),
        StateSet::from_states([1, 2, 5, 6]),
        Some(StateSet::from_states([2, 4, 6, 8])),
    )
}

/// Functionals of the five-state reduced model; serology is not modelled.
pub fn reduced5_functionals() -> FunctionalSet {
    infection_functionals(
        4.0,
        StateSet::from_states(1..5),
        StateSet::from_states([3, 4]),
        StateSet::from_states([1, 3]),
        None,
    )
}

pub fn reduced5_space() -> StateSpace {
    StateSpace::new(
        ["naive", "pcr_pos_asympt", "pcr_neg_asympt", "pcr_pos_sympt", "pcr_neg_post"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        vec![(0, 1), (1, 2), (1, 3), (3, 4)],
    )
    .expect("valid five-state graph")
}

/// Reduced model with Weibull infection and symptom onset and exponential
/// clearance; treatment acts on every transition.
pub fn reduced5_weibull() -> SemiMarkovModel {
    use Baseline::{Exponential as E, Weibull as W};
    let hazards = [W, E, W, E].into_iter().map(|b| Hazard::new(b, &["trt"])).collect();
    SemiMarkovModel::new(reduced5_space(), hazards).expect("valid reduced model")
}

/// Reduced model with piecewise-linear B-spline baselines, one interior
/// knot each (5/7 week for infection, one week otherwise).
pub fn reduced5_spline() -> Result<SemiMarkovModel> {
    let knots = [5.0 / 7.0, 1.0, 1.0, 1.0];
    let hazards = knots
        .iter()
        .map(|&k| Ok(Hazard::new(Baseline::BSpline(BSplineBasis::new(1, vec![k], 0.0, 4.0)?), &["trt"])))
        .collect::<Result<Vec<_>>>()?;
    SemiMarkovModel::new(reduced5_space(), hazards)
}

fn trial9(encoding: Encoding) -> Result<Scenario> {
    let truth = trial9_truth();
    let hazards = truth.iter().map(|(b, _, _)| Hazard::new(b.clone(), &["trt"])).collect();
    let model = SemiMarkovModel::new(trial9_space(), hazards)?;
    let mut theta = Vec::new();
    for (_, natural, beta) in &truth {
        theta.extend(natural.iter().map(|v| v.ln()));
        theta.push(*beta);
    }
    let reduced = encoding == Encoding::Trial9Reduced5;
    Ok(Scenario {
        name: if reduced { "trial9_reduced5" } else { "trial9" },
        description: if reduced {
            "nine-state infection model observed through weekly PCR, symptoms and final serology"
        } else {
            "nine-state infection model with weekly assessments of the true state"
        },
        model,
        theta,
        design: CovariateDesign::Alternating("trt".into()),
        scheme: ObservationScheme {
            visits: vec![1.0, 2.0, 3.0, 4.0],
            jitter: None,
            exact: vec![(1, 5)],
            epsilon: 1.0 / 168.0,
            encoding,
        },
        default_n: 1000,
        functionals: trial9_functionals(),
        truths: vec![
            ("pr_infec_mab", 0.407),
            ("pr_infec_placebo", 0.795),
            ("pr_sympt_mab", 0.124),
            ("pr_sympt_placebo", 0.430),
            ("rm_ti_mab", 2.97),
            ("rm_ti_placebo", 1.73),
            ("rm_pcr_mab", 1.95),
            ("rm_pcr_placebo", 1.52),
            ("pr_detected_mab", 0.843),
            ("pr_detected_placebo", 0.646),
            ("pr_sero_given_infec_mab", 0.378),
            ("pr_sero_given_infec_placebo", 0.715),
            ("pe_infec", 0.488),
            ("pe_sympt", 0.712),
            ("pe_asympt", 0.224),
        ],
    })
}
