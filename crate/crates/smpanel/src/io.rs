//! Input files (panel CSV, model TOML) and JSON fit results.
//!
//! The CSV layout is one row per record with columns `id, tstart, tstop,
//! statefrom, stateto, obstype` followed by covariates. States are 1-based;
//! a set of candidates is written `[1|3]`. `obstype` is 0 for a snapshot
//! and 1 for a continuously observed interval. Rows of one subject must be
//! contiguous and in time order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Covariates, ObsType, Record, Subject};
use crate::error::{Error, Result};
use crate::inference::Estimates;
use crate::markov::{self, CoxianExpansion, MarkovSurrogate};
use crate::mcem::McemConfig;
use crate::model::{Baseline, Hazard, SemiMarkovModel};
use crate::rng;
use crate::sampler::ProposalContext;
use crate::spline::BSplineBasis;
use crate::state::{StateSet, StateSpace};

const FIXED_COLUMNS: [&str; 6] = ["id", "tstart", "tstop", "statefrom", "stateto", "obstype"];

/// Parses panel data for a model with `n_states` states.
pub fn read_panel<R: Read>(reader: R, n_states: usize) -> Result<Vec<Subject>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (i, want) in FIXED_COLUMNS.iter().enumerate() {
        if headers.get(i) != Some(*want) {
            return Err(Error::Validation(format!(
                "column {} must be '{want}', found '{}'",
                i + 1,
                headers.get(i).unwrap_or("")
            )));
        }
    }
    let cov_names: Vec<String> = headers.iter().skip(FIXED_COLUMNS.len()).map(str::to_string).collect();
    let mut subjects: Vec<Subject> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("line {line}: '{}' in column {} is not a number", field(i), headers[i].to_string())))
        };
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(Error::Validation(format!("line {line}: empty id")));
        }
        let parse_set = |i: usize| {
            StateSet::parse(field(i), n_states).map_err(|e| Error::Validation(format!("line {line}: {e}")))
        };
        let obstype = match field(5) {
            "0" => ObsType::Snapshot,
            "1" => ObsType::Exact,
            other => {
                return Err(Error::Validation(format!("line {line}: obstype must be 0 or 1, found '{other}'")))
            }
        };
        let record = Record {
            t_start: num(1)?,
            t_stop: num(2)?,
            from: parse_set(3)?,
            to: parse_set(4)?,
            obstype,
        };
        let mut covariates = Covariates::new();
        for (k, name) in cov_names.iter().enumerate() {
            covariates.insert(name.clone(), num(FIXED_COLUMNS.len() + k)?);
        }
        match subjects.last_mut() {
            Some(s) if s.id == id => {
                if s.covariates != covariates {
                    return Err(Error::Validation(format!(
                        "line {line}: covariates of subject {id} change between records"
                    )));
                }
                s.records.push(record);
            }
            _ => {
                if subjects.iter().any(|s| s.id == id) {
                    return Err(Error::Validation(format!("line {line}: rows of subject {id} are not contiguous")));
                }
                subjects.push(Subject {
                    id,
                    covariates,
                    records: vec![record],
                });
            }
        }
    }
    if subjects.is_empty() {
        return Err(Error::Validation("the data file has no records".into()));
    }
    Ok(subjects)
}

pub fn read_panel_file(path: &Path, n_states: usize) -> Result<Vec<Subject>> {
    read_panel(std::fs::File::open(path)?, n_states)
}

/// Writes subjects in the CSV layout read by [`read_panel`]. Covariate
/// columns are the union of names, sorted.
pub fn write_panel<W: Write>(writer: W, subjects: &[Subject]) -> Result<()> {
    let mut names: Vec<&String> = subjects.iter().flat_map(|s| s.covariates.keys()).collect();
    names.sort();
    names.dedup();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(names.iter().map(|s| s.as_str()));
    w.write_record(&header)?;
    for s in subjects {
        for r in &s.records {
            let mut row = vec![
                s.id.clone(),
                format_num(r.t_start),
                format_num(r.t_stop),
                r.from.to_string(),
                r.to.to_string(),
                r.obstype.code().to_string(),
            ];
            row.extend(names.iter().map(|n| format_num(s.covariates.get(*n).copied().unwrap_or(f64::NAN))));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
fn format_num(x: f64) -> String {
    format!("{x:?}")
}

/// Hex SHA-256 of the raw data file, used to check that compared fits saw
/// the same data.
pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Weibull,
    Bspline,
}

/// One `[[transition]]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    /// 1-based source state.
    pub from: usize,
    /// 1-based destination state.
    pub to: usize,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covariates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    /// Interior knots, on the sojourn-time scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<f64>>,
    /// Number of interior knots to place automatically when `knots` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_knots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<[f64; 2]>,
}

/// Replaces a state by a chain of latent exponential phases; the result
/// is fitted as a Markov model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTypeSpec {
    /// 1-based state to expand.
    pub state: usize,
    pub phases: usize,
}

/// Contents of a model TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub states: Vec<String>,
    #[serde(rename = "transition")]
    pub transitions: Vec<TransitionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_type: Option<PhaseTypeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcem: Option<McemConfig>,
}

impl ModelSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.space()?;
        for t in &spec.transitions {
            match (t.family, t.knots.is_some() || t.n_knots.is_some() || t.degree.is_some() || t.boundary.is_some()) {
                (Family::Bspline, _) => {
                    if t.knots.is_some() == t.n_knots.is_some() {
                        return Err(Error::Config(format!(
                            "transition {}->{}: give exactly one of 'knots' and 'n_knots'",
                            t.from, t.to
                        )));
                    }
                }
                (_, true) => {
                    return Err(Error::Config(format!(
                        "transition {}->{}: spline options only apply to family \"bspline\"",
                        t.from, t.to
                    )))
                }
                _ => {}
            }
        }
        if let Some(p) = &spec.phase_type {
            if spec.transitions.iter().any(|t| t.family != Family::Exponential) {
                return Err(Error::Config("phase-type models need exponential transitions".into()));
            }
            if p.state == 0 || p.state > spec.states.len() {
                return Err(Error::Config(format!("phase_type.state {} is not a state", p.state)));
            }
        }
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn space(&self) -> Result<StateSpace> {
        let k = self.states.len();
        let pairs = self
            .transitions
            .iter()
            .map(|t| {
                if t.from == 0 || t.to == 0 || t.from > k || t.to > k {
                    Err(Error::Config(format!("transition {}->{} refers to an unknown state", t.from, t.to)))
                } else {
                    Ok((t.from - 1, t.to - 1))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        StateSpace::new(self.states.clone(), pairs)
    }

    /// Whether every spline has explicit knots.
    pub fn is_resolved(&self) -> bool {
        self.transitions.iter().all(|t| t.family != Family::Bspline || t.knots.is_some())
    }

    /// The exponential model with the same graph and covariates.
    pub fn markov_model(&self) -> Result<SemiMarkovModel> {
        let hazards = self
            .transitions
            .iter()
            .map(|t| Hazard {
                baseline: Baseline::Exponential,
                covariates: t.covariates.clone(),
            })
            .collect();
        SemiMarkovModel::new(self.space()?, hazards)
    }

    /// Builds the model; every spline must have explicit knots.
    pub fn build(&self) -> Result<SemiMarkovModel> {
        let hazards = self
            .transitions
            .iter()
            .map(|t| {
                let baseline = match t.family {
                    Family::Exponential => Baseline::Exponential,
                    Family::Weibull => Baseline::Weibull,
                    Family::Bspline => {
                        let knots = t.knots.clone().ok_or_else(|| {
                            Error::Config(format!("transition {}->{} has unresolved knots", t.from, t.to))
                        })?;
                        let [lo, hi] = t.boundary.ok_or_else(|| {
                            Error::Config(format!("transition {}->{} has no boundary knots", t.from, t.to))
                        })?;
                        Baseline::BSpline(BSplineBasis::new(t.degree.unwrap_or(3), knots, lo, hi)?)
                    }
                };
                Ok(Hazard {
                    baseline,
                    covariates: t.covariates.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SemiMarkovModel::new(self.space()?, hazards)
    }

    /// Fills in automatic knots and boundaries. Interior knots sit at
    /// equally spaced quantiles of the sojourn times ending in the
    /// transition, from one surrogate path drawn per subject; the upper
    /// boundary is the longest follow-up.
    pub fn resolve_knots(&self, surrogate: &MarkovSurrogate, subjects: &[Subject], seed: u64) -> Result<ModelSpec> {
        let mut out = self.clone();
        let max_follow = subjects.iter().map(|s| s.end() - s.start()).fold(0.0, f64::max);
        if out.transitions.iter().any(|t| t.family == Family::Bspline && t.boundary.is_none()) && !(max_follow > 0.0) {
            return Err(Error::Validation("no follow-up time to place spline boundaries".into()));
        }
        let needs_paths = out.transitions.iter().any(|t| t.family == Family::Bspline && t.knots.is_none());
        let mut sojourns: Vec<Vec<f64>> = vec![Vec::new(); out.transitions.len()];
        if needs_paths {
            let space = surrogate.space();
            for (i, s) in subjects.iter().enumerate() {
                let ctx = ProposalContext::new(surrogate, s)?;
                let mut r = rng::stream(seed, rng::domain::KNOTS, i as u64);
                let path = ctx.propose(&mut r)?.path;
                for seg in path.segments(space) {
                    if let Some(to) = seg.to {
                        let h = space.transition_index(seg.from, to).expect("allowed transition");
                        sojourns[h].push(seg.sojourn);
                    }
                }
            }
        }
        for (h, t) in out.transitions.iter_mut().enumerate() {
            if t.family != Family::Bspline {
                continue;
            }
            let boundary = *t.boundary.get_or_insert([0.0, max_follow]);
            if t.knots.is_none() {
                let n = t.n_knots.take().unwrap_or(0);
                let mut v: Vec<f64> = sojourns[h]
                    .iter()
                    .copied()
                    .filter(|&x| x > boundary[0] && x < boundary[1])
                    .collect();
                v.sort_by(f64::total_cmp);
                if n > 0 && v.len() < n + 1 {
                    return Err(Error::Validation(format!(
                        "too few sampled {}->{} transitions to place {n} knots",
                        t.from, t.to
                    )));
                }
                let knots: Vec<f64> = (1..=n)
                    .map(|j| crate::inference::quantile_sorted(&v, j as f64 / (n + 1) as f64))
                    .collect();
                t.knots = Some(knots);
            }
        }
        Ok(out)
    }

    /// The latent Markov model of a phase-type specification.
    pub fn phase_type_expansion(&self) -> Result<Option<CoxianExpansion>> {
        let Some(p) = &self.phase_type else {
            return Ok(None);
        };
        let observed = self.markov_model()?;
        let state = p.state - 1;
        let exit = observed
            .space()
            .successors(state)
            .iter()
            .next()
            .ok_or_else(|| Error::Config(format!("state {} is absorbing", p.state)))?;
        markov::coxian_expansion(&observed, state, exit, p.phases).map(Some)
    }
}

/// Provenance of the data behind a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataInfo {
    pub file: String,
    pub sha256: String,
    pub n_subjects: usize,
    pub n_records: usize,
}

/// Per-subject sampling diagnostics of an MCEM fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectDiagnostics {
    pub id: String,
    pub paths: usize,
    pub ess: f64,
    pub khat: Option<f64>,
}

/// The fit file written by the command-line tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSpec,
    pub config: McemConfig,
    pub data: DataInfo,
    pub estimates: Estimates,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
