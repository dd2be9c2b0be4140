//! Enumerated finite MDP with sparse transition rows.

use std::io::{self, Write};

use thiserror::Error;

use crate::state::StateSpace;

/// Tolerance on row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("row ({state}, {action}) sums to {sum}")]
    RowNotNormalized { state: usize, action: usize, sum: f64 },
    #[error("row ({state}, {action}) has probability {prob} outside [0, 1]")]
    BadProbability { state: usize, action: usize, prob: f64 },
    #[error("row ({state}, {action}) points at state {target} of {states}")]
    TargetOutOfRange {
        state: usize,
        action: usize,
        target: usize,
        states: usize,
    },
    #[error("state {state} has invalid cost {cost}")]
    BadCost { state: usize, cost: f64 },
    #[error("expected {expected} rows, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("MDP needs at least one state and one action")]
    Empty,
}

/// Finite MDP over dense state ids `0..states` and actions `0..actions`.
///
/// Rows are stored CSR-style, one row per `(state, action)` at position
/// `state * actions + action`, with targets ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    states: usize,
    actions: usize,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    probs: Vec<f64>,
    cost: Vec<f64>,
    space: Option<StateSpace>,
}

impl FiniteMdp {
    /// `rows[s * actions + a]` lists `(next_state, probability)`. Duplicate
    /// targets are merged and zero entries dropped.
    pub fn new(
        states: usize,
        actions: usize,
        rows: Vec<Vec<(usize, f64)>>,
        cost: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if states == 0 || actions == 0 {
            return Err(MdpError::Empty);
        }
        if rows.len() != states * actions {
            return Err(MdpError::ShapeMismatch {
                expected: states * actions,
                got: rows.len(),
            });
        }
        if cost.len() != states {
            return Err(MdpError::ShapeMismatch {
                expected: states,
                got: cost.len(),
            });
        }
        for (state, &c) in cost.iter().enumerate() {
            if !(c.is_finite() && c >= 0.0) {
                return Err(MdpError::BadCost { state, cost: c });
            }
        }
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut targets = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            let (state, action) = (r / actions, r % actions);
            row.sort_by_key(|&(t, _)| t);
            let mut sum = 0.0;
            let start = targets.len();
            for (t, p) in row {
                if !(0.0..=1.0).contains(&p) || p.is_nan() {
                    return Err(MdpError::BadProbability { state, action, prob: p });
                }
                if t >= states {
                    return Err(MdpError::TargetOutOfRange {
                        state,
                        action,
                        target: t,
                        states,
                    });
                }
                sum += p;
                if p == 0.0 {
                    continue;
                }
                if targets.len() > start && *targets.last().unwrap() as usize == t {
                    *probs.last_mut().unwrap() += p;
                } else {
                    targets.push(t as u32);
                    probs.push(p);
                }
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(MdpError::RowNotNormalized { state, action, sum });
            }
            offsets.push(targets.len());
        }
        Ok(FiniteMdp {
            states,
            actions,
            offsets,
            targets,
            probs,
            cost,
            space: None,
        })
    }

    /// Attaches the backlog-vector labelling of the state ids.
    pub fn with_space(mut self, space: StateSpace) -> Self {
        debug_assert_eq!(space.size(), self.states);
        self.space = Some(space);
        self
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn space(&self) -> Option<&StateSpace> {
        self.space.as_ref()
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    /// Next-state ids and probabilities of `(state, action)`.
    #[inline]
    pub fn row(&self, state: usize, action: usize) -> (&[u32], &[f64]) {
        let r = state * self.actions + action;
        let (lo, hi) = (self.offsets[r], self.offsets[r + 1]);
        (&self.targets[lo..hi], &self.probs[lo..hi])
    }

    /// `sum_j p(j | state, action) * values[j]`.
    #[inline]
    pub fn expect(&self, state: usize, action: usize, values: &[f64]) -> f64 {
        let (t, p) = self.row(state, action);
        t.iter().zip(p).map(|(&j, &pj)| pj * values[j as usize]).sum()
    }

    pub fn probability(&self, state: usize, action: usize, next: usize) -> f64 {
        let (t, p) = self.row(state, action);
        match t.binary_search(&(next as u32)) {
            Ok(i) => p[i],
            Err(_) => 0.0,
        }
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        (0..self.states * self.actions)
            .map(|r| {
                let s: f64 = self.probs[self.offsets[r]..self.offsets[r + 1]].iter().sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn nonzeros(&self) -> usize {
        self.targets.len()
    }

    /// Debug dump: a `# D=..,U=..` line, then `state_id,action,next_state_id,prob`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        match &self.space {
            Some(space) => writeln!(out, "# D={},U={}", space.queues(), space.threshold())?,
            None => writeln!(out, "# D=,U=")?,
        }
        writeln!(out, "state_id,action,next_state_id,prob")?;
        for s in 0..self.states {
            for a in 0..self.actions {
                let (t, p) = self.row(s, a);
                for (&j, &pj) in t.iter().zip(p) {
                    writeln!(out, "{s},{a},{j},{pj}")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> FiniteMdp {
        FiniteMdp::new(
            2,
            2,
            vec![
                vec![(0, 1.0)],
                vec![(0, 1.0)],
                vec![(1, 1.0)],
                vec![(0, 0.5), (0, 0.5)],
            ],
            vec![0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn merges_duplicates_and_reads_rows() {
        let mdp = two_state();
        assert_eq!(mdp.row(1, 1), (&[0u32][..], &[1.0][..]));
        assert_eq!(mdp.probability(1, 0, 1), 1.0);
        assert_eq!(mdp.probability(1, 0, 0), 0.0);
        assert_eq!(mdp.expect(1, 0, &[3.0, 5.0]), 5.0);
        assert!(mdp.max_row_error() <= ROW_SUM_TOL);
    }

    #[test]
    fn rejects_malformed_rows() {
        let err = FiniteMdp::new(1, 1, vec![vec![(0, 0.9)]], vec![0.0]).unwrap_err();
        assert!(matches!(err, MdpError::RowNotNormalized { .. }));
        let err = FiniteMdp::new(1, 1, vec![vec![(1, 1.0)]], vec![0.0]).unwrap_err();
        assert!(matches!(err, MdpError::TargetOutOfRange { .. }));
        let err = FiniteMdp::new(1, 1, vec![vec![(0, 1.0)]], vec![-1.0]).unwrap_err();
        assert!(matches!(err, MdpError::BadCost { .. }));
        let err = FiniteMdp::new(1, 1, vec![vec![(0, 1.5), (0, -0.5)]], vec![0.0]).unwrap_err();
        assert!(matches!(err, MdpError::BadProbability { .. }));
    }

    #[test]
    fn csv_dump_format() {
        let mdp = FiniteMdp::new(1, 1, vec![vec![(0, 1.0)]], vec![0.0])
            .unwrap()
            .with_space(StateSpace::with_default_cap(1, 0).unwrap());
        let mut buf = Vec::new();
        mdp.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# D=1,U=0\nstate_id,action,next_state_id,prob\n0,0,0,1\n"
        );
    }
}
