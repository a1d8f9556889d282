//! Panel-data records and structural validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::state::{StateSet, StateSpace};

/// Time-fixed covariate values keyed by name.
pub type Covariates = BTreeMap<String, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsType {
    /// State seen only at `t_stop`.
    Snapshot,
    /// Process watched continuously over `(t_start, t_stop]`.
    Exact,
}

impl ObsType {
    pub fn code(self) -> u8 {
        match self {
            ObsType::Snapshot => 0,
            ObsType::Exact => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub t_start: f64,
    pub t_stop: f64,
    pub from: StateSet,
    pub to: StateSet,
    pub obstype: ObsType,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub covariates: Covariates,
    pub records: Vec<Record>,
}

impl Subject {
    /// Known state at enrolment, when the first record pins it down.
    pub fn initial_state(&self) -> Option<usize> {
        self.records.first().and_then(|r| r.from.as_single())
    }

    pub fn start(&self) -> f64 {
        self.records.first().map_or(0.0, |r| r.t_start)
    }

    pub fn end(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t_stop)
    }

    /// Record boundaries `t_0 < t_1 < ... < t_L`.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.records.len() + 1);
        b.push(self.start());
        b.extend(self.records.iter().map(|r| r.t_stop));
        b
    }

    /// Candidate sets at the record boundaries: the initial set, then
    /// `to_j ∩ from_{j+1}` for interior boundaries and `to_L` at the end.
    pub fn boundary_sets(&self) -> Vec<StateSet> {
        let n = self.records.len();
        let mut c = Vec::with_capacity(n + 1);
        c.push(self.records.first().map_or(StateSet::EMPTY, |r| r.from));
        for j in 0..n {
            let to = self.records[j].to;
            c.push(if j + 1 < n {
                to.intersect(self.records[j + 1].from)
            } else {
                to
            });
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FindingKind {
    NoRecords,
    Gap,
    Overlap,
    EmptyInterval,
    EmptySet,
    InvalidState,
    ExactNotSingleton,
    AmbiguousInitialState,
    Inconsistent,
    Unreachable,
}

impl FindingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingKind::NoRecords => "no-records",
            FindingKind::Gap => "gap",
            FindingKind::Overlap => "overlap",
            FindingKind::EmptyInterval => "empty-interval",
            FindingKind::EmptySet => "empty-set",
            FindingKind::InvalidState => "invalid-state",
            FindingKind::ExactNotSingleton => "exact-not-singleton",
            FindingKind::AmbiguousInitialState => "ambiguous-initial-state",
            FindingKind::Inconsistent => "inconsistent",
            FindingKind::Unreachable => "unreachable",
        }
    }
}

/// One structural problem with a subject's records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub subject: String,
    /// 0-based record index, when the problem is tied to a record.
    pub record: Option<usize>,
    pub kind: FindingKind,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.record {
            Some(r) => write!(
                f,
                "subject {} record {}: {} ({})",
                self.subject,
                r + 1,
                self.kind.as_str(),
                self.message
            ),
            None => write!(f, "subject {}: {} ({})", self.subject, self.kind.as_str(), self.message),
        }
    }
}

/// Lists every structural violation in `subject`; an empty list means the
/// subject can be handed to the fitting routines.
pub fn validate_subject(subject: &Subject, space: &StateSpace) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |record: Option<usize>, kind: FindingKind, message: String| {
        out.push(Finding {
            subject: subject.id.clone(),
            record,
            kind,
            message,
        })
    };
    if subject.records.is_empty() {
        push(None, FindingKind::NoRecords, "subject has no records".into());
        return out;
    }
    let all = StateSet::all(space.n_states());
    let mut structural_ok = true;
    for (j, r) in subject.records.iter().enumerate() {
        if !(r.t_stop > r.t_start) || !r.t_start.is_finite() || !r.t_stop.is_finite() {
            push(
                Some(j),
                FindingKind::EmptyInterval,
                format!("tstart {} must be below tstop {}", r.t_start, r.t_stop),
            );
            structural_ok = false;
        }
        if j > 0 {
            let prev = subject.records[j - 1].t_stop;
            if r.t_start > prev {
                push(Some(j), FindingKind::Gap, format!("gap between {prev} and {}", r.t_start));
                structural_ok = false;
            } else if r.t_start < prev {
                push(
                    Some(j),
                    FindingKind::Overlap,
                    format!("record starts at {} before previous end {prev}", r.t_start),
                );
                structural_ok = false;
            }
        }
        for (name, set) in [("statefrom", r.from), ("stateto", r.to)] {
            if set.is_empty() {
                push(Some(j), FindingKind::EmptySet, format!("{name} is empty"));
                structural_ok = false;
            } else if !set.is_subset(all) {
                push(Some(j), FindingKind::InvalidState, format!("{name} outside the state space"));
                structural_ok = false;
            }
        }
        if r.obstype == ObsType::Exact && (r.from.len() != 1 || r.to.len() != 1) {
            push(
                Some(j),
                FindingKind::ExactNotSingleton,
                "continuously observed records need singleton state sets".into(),
            );
            structural_ok = false;
        }
    }
    if subject.records[0].from.len() > 1 {
        push(
            Some(0),
            FindingKind::AmbiguousInitialState,
            "the first record must fix the enrolment state".into(),
        );
        structural_ok = false;
    }
    if !structural_ok {
        return out;
    }

    let sets = subject.boundary_sets();
    for (j, c) in sets.iter().enumerate().skip(1) {
        if c.is_empty() {
            push(
                Some(j - 1),
                FindingKind::Inconsistent,
                "stateto does not intersect the next record's statefrom".into(),
            );
            return out;
        }
    }
    // Propagate the set of states that can be occupied at each boundary.
    let mut feasible = sets[0];
    for (j, r) in subject.records.iter().enumerate() {
        let next = match r.obstype {
            ObsType::Snapshot => space.reachable_from_set(feasible),
            ObsType::Exact => {
                let f = r.from.as_single().expect("checked singleton");
                if feasible.contains(f) {
                    StateSet::single(f).union(space.successors(f))
                } else {
                    StateSet::EMPTY
                }
            }
        }
        .intersect(sets[j + 1]);
        if next.is_empty() {
            push(
                Some(j),
                FindingKind::Unreachable,
                format!(
                    "no state in {} can be reached from {} under the transition graph",
                    sets[j + 1],
                    feasible
                ),
            );
            return out;
        }
        feasible = next;
    }
    out
}
