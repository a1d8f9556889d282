//! Sample paths of the latent multistate process.

use serde::{Deserialize, Serialize};

use crate::data::{ObsType, Subject};
use crate::error::{Error, Result};
use crate::state::StateSpace;

/// One subject's trajectory as jump times paired with visited states,
/// followed until `end` (absorption or censoring).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    /// `times[0]` is entry into `states[0]`; `times[n]` is the jump into `states[n]`.
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    /// Censoring time; the path is observed on `[times[0], end]`.
    pub end: f64,
}

/// A sojourn in `from` lasting `sojourn`, ending either in a transition
/// to `to` or in censoring (`to == None`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub from: usize,
    pub to: Option<usize>,
    pub sojourn: f64,
}

impl SamplePath {
    pub fn constant(state: usize, start: f64, end: f64) -> Self {
        SamplePath {
            times: vec![start],
            states: vec![state],
            end,
        }
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn n_jumps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_state(&self) -> usize {
        *self.states.last().expect("path has at least one state")
    }

    /// Appends a jump; `time` must not precede the last jump.
    pub fn push(&mut self, time: f64, state: usize) {
        self.times.push(time);
        self.states.push(state);
    }

    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let n = self.times.partition_point(|&x| x <= t);
        self.states[n.max(1) - 1]
    }

    /// Time of first entry into any state of `targets`, if it happens.
    pub fn entry_time(&self, target: impl Fn(usize) -> bool) -> Option<f64> {
        self.states
            .iter()
            .zip(&self.times)
            .find(|(s, _)| target(**s))
            .map(|(_, &t)| t)
    }

    /// Sojourn segments in the likelihood's order. The trailing censored
    /// segment is present only for a non-absorbing final state with
    /// positive residual follow-up.
    pub fn segments<'a>(&'a self, space: &'a StateSpace) -> impl Iterator<Item = Segment> + 'a {
        let n = self.states.len();
        let jumps = (1..n).map(move |i| Segment {
            from: self.states[i - 1],
            to: Some(self.states[i]),
            sojourn: self.times[i] - self.times[i - 1],
        });
        let last = self.final_state();
        let tail_len = self.end - self.times[n - 1];
        let tail = (tail_len > 0.0 && !space.is_absorbing(last)).then_some(Segment {
            from: last,
            to: None,
            sojourn: tail_len,
        });
        jumps.chain(tail)
    }

    /// Checks structural validity against a state space.
    pub fn validate(&self, space: &StateSpace) -> Result<()> {
        if self.times.len() != self.states.len() || self.states.is_empty() {
            return Err(Error::Domain("path times and states differ in length".into()));
        }
        let k = space.n_states();
        for w in self.states.windows(2) {
            if w[0] >= k || w[1] >= k || space.transition_index(w[0], w[1]).is_none() {
                return Err(Error::Domain(format!(
                    "path contains disallowed transition {}->{}",
                    w[0] + 1,
                    w[1] + 1
                )));
            }
        }
        if self.states[0] >= k {
            return Err(Error::Domain("path state outside state space".into()));
        }
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain("path jump times must strictly increase".into()));
            }
        }
        if self.end < *self.times.last().unwrap() {
            return Err(Error::Domain("path censoring time precedes its last jump".into()));
        }
        Ok(())
    }

    /// Whether the path agrees with every record of `subject`.
    pub fn is_concordant(&self, subject: &Subject) -> bool {
        let Some(first) = subject.records.first() else {
            return true;
        };
        if !first.from.contains(self.state_at(first.t_start)) {
            return false;
        }
        for r in &subject.records {
            match r.obstype {
                ObsType::Snapshot => {
                    if !r.to.contains(self.state_at(r.t_stop)) {
                        return false;
                    }
                }
                ObsType::Exact => {
                    let s = self.state_at(r.t_start);
                    if !r.from.contains(s) {
                        return false;
                    }
                    // No jump strictly inside the record.
                    let inside = self
                        .times
                        .iter()
                        .skip(1)
                        .any(|&t| t > r.t_start && t < r.t_stop);
                    if inside || !r.to.contains(self.state_at(r.t_stop)) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_and_state_lookup() {
        let sp = StateSpace::numbered(3, &[(1, 2), (1, 3), (2, 3)]).unwrap();
        let p = SamplePath {
            times: vec![0.0, 0.4, 0.9],
            states: vec![0, 1, 2],
            end: 1.0,
        };
        p.validate(&sp).unwrap();
        let segs: Vec<_> = p.segments(&sp).collect();
        assert_eq!(segs.len(), 2);
        assert_eq!(p.state_at(0.0), 0);
        assert_eq!(p.state_at(0.4), 1);
        assert_eq!(p.state_at(0.95), 2);

        let q = SamplePath {
            times: vec![0.0, 0.4],
            states: vec![0, 1],
            end: 1.0,
        };
        let segs: Vec<_> = q.segments(&sp).collect();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].to, None);
        assert!((segs[1].sojourn - 0.6).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_paths() {
        let sp = StateSpace::numbered(3, &[(1, 2), (2, 3)]).unwrap();
        let p = SamplePath {
            times: vec![0.0, 0.5],
            states: vec![0, 2],
            end: 1.0,
        };
        assert!(p.validate(&sp).is_err());
    }
}
