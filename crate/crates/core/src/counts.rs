//! Visit counts `N(Q, a)` and transition counts `P(Q, a, Q')` gathered while
//! acting, and the empirical kernel built from them.

use std::collections::HashMap;

use thiserror::Error;

use crate::mdp::{FiniteMdp, MdpError};
use crate::state::StateSpace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CountsError {
    #[error("corrupt counts at (state {state}, action {action}): transitions sum to {transitions}, visits {visits}")]
    Corrupt {
        state: usize,
        action: usize,
        visits: u64,
        transitions: u64,
    },
    #[error("state {state} has an empty reachable set")]
    EmptyReachable { state: usize },
    #[error("reachable sets cover {got} states, kernel needs {expected}")]
    ReachableShape { expected: usize, got: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct PairCounts {
    visits: u64,
    // sorted by next-state id
    next: Vec<(usize, u64)>,
}

/// Sparse counters keyed by truncated state id. Every update increments the
/// visit count and exactly one transition count, so the two stay consistent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionCounts {
    actions: usize,
    pairs: HashMap<(usize, usize), PairCounts>,
    updates: u64,
}

impl TransitionCounts {
    pub fn new(actions: usize) -> Self {
        TransitionCounts {
            actions,
            pairs: HashMap::new(),
            updates: 0,
        }
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn record(&mut self, state: usize, action: usize, next: usize) {
        debug_assert!(action < self.actions);
        let entry = self.pairs.entry((state, action)).or_default();
        entry.visits += 1;
        match entry.next.binary_search_by_key(&next, |&(id, _)| id) {
            Ok(i) => entry.next[i].1 += 1,
            Err(i) => entry.next.insert(i, (next, 1)),
        }
        self.updates += 1;
    }

    pub fn visits(&self, state: usize, action: usize) -> u64 {
        self.pairs.get(&(state, action)).map_or(0, |p| p.visits)
    }

    /// Observed `(next_state, count)` pairs, ascending by id.
    pub fn transitions(&self, state: usize, action: usize) -> &[(usize, u64)] {
        self.pairs
            .get(&(state, action))
            .map_or(&[], |p| p.next.as_slice())
    }

    pub fn transition_count(&self, state: usize, action: usize, next: usize) -> u64 {
        let row = self.transitions(state, action);
        row.binary_search_by_key(&next, |&(id, _)| id)
            .map_or(0, |i| row[i].1)
    }

    /// Total number of updates. Counts only grow, so within one run two
    /// snapshots with equal totals are identical tables.
    pub fn total_updates(&self) -> u64 {
        self.updates
    }

    pub fn visited_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Visited `(state, action)` pairs in ascending order.
    pub fn visited_keys(&self) -> Vec<(usize, usize)> {
        let mut keys: Vec<_> = self.pairs.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Checks `sum_{Q'} P(Q, a, Q') = N(Q, a)` for every pair.
    pub fn check_consistency(&self) -> Result<(), CountsError> {
        for key in self.visited_keys() {
            let p = &self.pairs[&key];
            let transitions: u64 = p.next.iter().map(|&(_, c)| c).sum();
            if transitions != p.visits {
                return Err(CountsError::Corrupt {
                    state: key.0,
                    action: key.1,
                    visits: p.visits,
                    transitions,
                });
            }
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn corrupt_for_test(&mut self, state: usize, action: usize) {
        self.pairs.entry((state, action)).or_default().visits += 1;
    }
}

/// Empirical kernel over the truncated space: visited pairs get observed
/// frequencies, unvisited pairs are uniform over `reachable[state]`.
///
/// `reachable[s]` holds truncated ids of states reachable from `s` in one
/// slot under some action. Cost is total backlog.
pub fn counts_to_kernel(
    counts: &TransitionCounts,
    reachable: &[Vec<usize>],
    space: &StateSpace,
) -> Result<FiniteMdp, CountsError> {
    let states = space.size();
    if reachable.len() != states {
        return Err(CountsError::ReachableShape {
            expected: states,
            got: reachable.len(),
        });
    }
    let actions = counts.actions();
    let mut rows = Vec::with_capacity(states * actions);
    for (s, reach) in reachable.iter().enumerate() {
        for a in 0..actions {
            let n = counts.visits(s, a);
            if n == 0 {
                if reach.is_empty() {
                    return Err(CountsError::EmptyReachable { state: s });
                }
                let w = 1.0 / reach.len() as f64;
                rows.push(reach.iter().map(|&j| (j, w)).collect());
            } else {
                let observed = counts.transitions(s, a);
                let total: u64 = observed.iter().map(|&(_, c)| c).sum();
                if total != n {
                    return Err(CountsError::Corrupt {
                        state: s,
                        action: a,
                        visits: n,
                        transitions: total,
                    });
                }
                let nf = n as f64;
                rows.push(observed.iter().map(|&(j, c)| (j, c as f64 / nf)).collect());
            }
        }
    }
    let mut buf = vec![0u32; space.queues()];
    let cost = (0..states)
        .map(|s| {
            space.write_vector(s, &mut buf);
            buf.iter().map(|&x| f64::from(x)).sum()
        })
        .collect();
    Ok(FiniteMdp::new(states, actions, rows, cost)?.with_space(*space))
}
