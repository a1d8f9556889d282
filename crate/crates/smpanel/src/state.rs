//! State spaces with their transition graphs, and candidate-state sets.
//!
//! States are stored 0-based internally; every user-facing rendering
//! (CSV, config files, reports) is 1-based.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of states supported by the bitmask representation.
pub const MAX_STATES: usize = 64;

/// A subset of the state space, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StateSet(u64);

impl StateSet {
    pub const EMPTY: StateSet = StateSet(0);

    pub fn single(state: usize) -> Self {
        debug_assert!(state < MAX_STATES);
        StateSet(1u64 << state)
    }

    /// All states `0..k`.
    pub fn all(k: usize) -> Self {
        if k >= MAX_STATES {
            StateSet(u64::MAX)
        } else {
            StateSet((1u64 << k) - 1)
        }
    }

    pub fn from_states<I: IntoIterator<Item = usize>>(states: I) -> Self {
        let mut s = StateSet::EMPTY;
        for x in states {
            s.insert(x);
        }
        s
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, state: usize) -> bool {
        state < MAX_STATES && (self.0 >> state) & 1 == 1
    }

    pub fn insert(&mut self, state: usize) {
        self.0 |= 1u64 << state;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// The unique member, if the set is a singleton.
    pub fn as_single(self) -> Option<usize> {
        if self.len() == 1 {
            Some(self.0.trailing_zeros() as usize)
        } else {
            None
        }
    }

    pub fn intersect(self, other: StateSet) -> StateSet {
        StateSet(self.0 & other.0)
    }

    pub fn union(self, other: StateSet) -> StateSet {
        StateSet(self.0 | other.0)
    }

    pub fn is_subset(self, other: StateSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let s = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(s)
            }
        })
    }

    /// Parses the CSV encoding: `2` or `[1|3]`, with 1-based labels.
    pub fn parse(text: &str, n_states: usize) -> Result<StateSet> {
        let t = text.trim();
        let inner = if let Some(rest) = t.strip_prefix('[') {
            rest.strip_suffix(']')
                .ok_or_else(|| Error::Parse(format!("unterminated state set '{text}'")))?
        } else {
            t
        };
        let mut set = StateSet::EMPTY;
        for part in inner.split('|') {
            let p = part.trim();
            if p.is_empty() {
                continue;
            }
            let v: usize = p
                .parse()
                .map_err(|_| Error::Parse(format!("invalid state label '{p}' in '{text}'")))?;
            if v == 0 || v > n_states {
                return Err(Error::Parse(format!(
                    "state {v} outside 1..={n_states} in '{text}'"
                )));
            }
            set.insert(v - 1);
        }
        Ok(set)
    }
}

impl fmt::Display for StateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = self.as_single() {
            return write!(f, "{}", s + 1);
        }
        write!(f, "[")?;
        for (i, s) in self.iter().enumerate() {
            if i > 0 {
                write!(f, "|")?;
            }
            write!(f, "{}", s + 1)?;
        }
        write!(f, "]")
    }
}

impl fmt::Debug for StateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateSet({self})")
    }
}

/// States plus the allowed direct transitions between them.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    names: Vec<String>,
    transitions: Vec<(usize, usize)>,
    index: Vec<Option<usize>>,
    exits: Vec<Vec<usize>>,
    reach: Vec<StateSet>,
}

impl StateSpace {
    /// Builds a state space from labels and 0-based transition pairs.
    ///
    /// The transition graph must be acyclic.
    pub fn new(names: Vec<String>, transitions: Vec<(usize, usize)>) -> Result<Self> {
        let k = names.len();
        if k == 0 {
            return Err(Error::Config("state space has no states".into()));
        }
        if k > MAX_STATES {
            return Err(Error::Config(format!("at most {MAX_STATES} states are supported")));
        }
        let mut index = vec![None; k * k];
        let mut exits = vec![Vec::new(); k];
        for (h, &(a, b)) in transitions.iter().enumerate() {
            if a >= k || b >= k {
                return Err(Error::Config(format!(
                    "transition {}->{} references a state outside 1..={k}",
                    a + 1,
                    b + 1
                )));
            }
            if a == b {
                return Err(Error::Config(format!("self-transition {}->{}", a + 1, b + 1)));
            }
            if index[a * k + b].is_some() {
                return Err(Error::Config(format!("duplicate transition {}->{}", a + 1, b + 1)));
            }
            index[a * k + b] = Some(h);
            exits[a].push(h);
        }
        // Reflexive-transitive closure by repeated relaxation; k is small.
        let mut reach: Vec<StateSet> = (0..k).map(StateSet::single).collect();
        loop {
            let mut changed = false;
            for &(a, b) in &transitions {
                let merged = reach[a].union(reach[b]);
                if merged != reach[a] {
                    reach[a] = merged;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for &(a, b) in &transitions {
            if reach[b].contains(a) {
                return Err(Error::Config(format!(
                    "transition graph has a cycle through {}->{}",
                    a + 1,
                    b + 1
                )));
            }
        }
        Ok(StateSpace {
            names,
            transitions,
            index,
            exits,
            reach,
        })
    }

    /// Convenience constructor with numeric labels and 1-based pairs.
    pub fn numbered(k: usize, transitions_1based: &[(usize, usize)]) -> Result<Self> {
        let names = (1..=k).map(|i| i.to_string()).collect();
        let tr = transitions_1based
            .iter()
            .map(|&(a, b)| {
                if a == 0 || b == 0 {
                    Err(Error::Config("state labels are 1-based".into()))
                } else {
                    Ok((a - 1, b - 1))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(names, tr)
    }

    pub fn n_states(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn transitions(&self) -> &[(usize, usize)] {
        &self.transitions
    }

    pub fn n_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn transition_index(&self, from: usize, to: usize) -> Option<usize> {
        let k = self.n_states();
        if from >= k || to >= k {
            return None;
        }
        self.index[from * k + to]
    }

    /// Transition indices leaving `state`.
    pub fn exits(&self, state: usize) -> &[usize] {
        &self.exits[state]
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.exits[state].is_empty()
    }

    pub fn absorbing(&self) -> StateSet {
        StateSet::from_states((0..self.n_states()).filter(|&s| self.is_absorbing(s)))
    }

    /// States reachable from `state` in zero or more transitions.
    pub fn reachable_from(&self, state: usize) -> StateSet {
        self.reach[state]
    }

    /// Union of the states reachable from any member of `set`.
    pub fn reachable_from_set(&self, set: StateSet) -> StateSet {
        set.iter().fold(StateSet::EMPTY, |acc, s| acc.union(self.reach[s]))
    }

    /// States from which some member of `target` can be reached.
    pub fn can_reach(&self, target: StateSet) -> StateSet {
        StateSet::from_states(
            (0..self.n_states()).filter(|&s| !self.reach[s].intersect(target).is_empty()),
        )
    }

    /// Direct successors of `state`.
    pub fn successors(&self, state: usize) -> StateSet {
        StateSet::from_states(self.exits[state].iter().map(|&h| self.transitions[h].1))
    }

    pub fn label(&self, state: usize) -> String {
        (state + 1).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        let s = StateSet::parse("[1|3]", 4).unwrap();
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(s.to_string(), "[1|3]");
        assert_eq!(StateSet::parse("2", 4).unwrap().to_string(), "2");
        assert!(StateSet::parse("5", 4).is_err());
        assert!(StateSet::parse("[1|2", 4).is_err());
    }

    #[test]
    fn illness_death_structure() {
        let sp = StateSpace::numbered(3, &[(1, 2), (1, 3), (2, 3)]).unwrap();
        assert!(sp.is_absorbing(2));
        assert_eq!(sp.exits(0).len(), 2);
        assert_eq!(sp.reachable_from(1), StateSet::from_states([1, 2]));
        assert_eq!(sp.can_reach(StateSet::single(1)), StateSet::from_states([0, 1]));
        assert_eq!(sp.transition_index(1, 2), Some(2));
        assert_eq!(sp.transition_index(2, 1), None);
    }

    #[test]
    fn rejects_cycles_and_self_loops() {
        assert!(StateSpace::numbered(2, &[(1, 2), (2, 1)]).is_err());
        assert!(StateSpace::numbered(2, &[(1, 1)]).is_err());
        assert!(StateSpace::numbered(2, &[(1, 3)]).is_err());
    }
}
