//! Backlog vectors, the truncated state space and its inner/outer partition.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest truncated state space enumerated unless the caller raises it.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("truncated state space has {count} states, above the cap of {cap}")]
    StateCountExceeded { count: u128, cap: usize },
    #[error("threshold U={threshold} must exceed the per-slot change bound W={max_change}")]
    ThresholdTooSmall { threshold: u32, max_change: u32 },
    #[error("queue count must be at least 1")]
    NoQueues,
}

/// Backlog of every queue, in packets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueueVector(Vec<u32>);

impl QueueVector {
    pub fn zeros(queues: usize) -> Self {
        QueueVector(vec![0; queues])
    }

    pub fn new(backlog: Vec<u32>) -> Self {
        QueueVector(backlog)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [u32] {
        &mut self.0
    }

    /// Largest coordinate, `Q_max`.
    pub fn max_backlog(&self) -> u32 {
        max_backlog(&self.0)
    }

    /// Total backlog, which is also the per-slot cost.
    pub fn total(&self) -> u64 {
        total_backlog(&self.0)
    }

    pub fn truncated(&self, threshold: u32) -> QueueVector {
        truncate(self, threshold)
    }

    /// L1 distance between two backlog vectors of equal length.
    pub fn l1_distance(&self, other: &QueueVector) -> u64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| u64::from(a.abs_diff(b)))
            .sum()
    }
}

impl From<Vec<u32>> for QueueVector {
    fn from(v: Vec<u32>) -> Self {
        QueueVector(v)
    }
}

impl<const N: usize> From<[u32; N]> for QueueVector {
    fn from(v: [u32; N]) -> Self {
        QueueVector(v.to_vec())
    }
}

impl std::ops::Index<usize> for QueueVector {
    type Output = u32;
    fn index(&self, i: usize) -> &u32 {
        &self.0[i]
    }
}

impl fmt::Display for QueueVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, q) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{q}")?;
        }
        write!(f, ")")
    }
}

pub fn max_backlog(q: &[u32]) -> u32 {
    q.iter().copied().max().unwrap_or(0)
}

pub fn total_backlog(q: &[u32]) -> u64 {
    q.iter().map(|&x| u64::from(x)).sum()
}

/// Position of an action in an environment's action list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Coordinate-wise `min(Q_i, U)`.
pub fn truncate(q: &QueueVector, threshold: u32) -> QueueVector {
    QueueVector(q.0.iter().map(|&x| x.min(threshold)).collect())
}

pub fn truncate_in_place(q: &mut [u32], threshold: u32) {
    for x in q {
        *x = (*x).min(threshold);
    }
}

/// The truncated state space `{Q : Q_max <= U}` with a dense lexicographic
/// indexing. The first queue is the most significant digit, so id 0 is the
/// zero vector and id `size - 1` is `(U, .., U)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateSpace {
    queues: usize,
    threshold: u32,
}

impl StateSpace {
    /// Builds the space after checking `(U+1)^D` against `cap`.
    pub fn new(queues: usize, threshold: u32, cap: usize) -> Result<Self, StateError> {
        if queues == 0 {
            return Err(StateError::NoQueues);
        }
        let count = state_count(queues, threshold);
        if count > cap as u128 {
            return Err(StateError::StateCountExceeded { count, cap });
        }
        Ok(StateSpace { queues, threshold })
    }

    pub fn with_default_cap(queues: usize, threshold: u32) -> Result<Self, StateError> {
        Self::new(queues, threshold, DEFAULT_STATE_CAP)
    }

    pub fn queues(&self) -> usize {
        self.queues
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn size(&self) -> usize {
        state_count(self.queues, self.threshold) as usize
    }

    /// Dense id of `q`, or `None` when some coordinate exceeds `U` or the
    /// length is wrong.
    pub fn index_of(&self, q: &[u32]) -> Option<usize> {
        if q.len() != self.queues {
            return None;
        }
        let base = self.threshold as usize + 1;
        let mut id = 0usize;
        for &x in q {
            if x > self.threshold {
                return None;
            }
            id = id * base + x as usize;
        }
        Some(id)
    }

    pub fn vector(&self, id: usize) -> QueueVector {
        let mut out = vec![0u32; self.queues];
        self.write_vector(id, &mut out);
        QueueVector(out)
    }

    pub fn write_vector(&self, mut id: usize, out: &mut [u32]) {
        let base = self.threshold as usize + 1;
        for slot in out.iter_mut().rev() {
            *slot = (id % base) as u32;
            id /= base;
        }
    }

    /// Id of the truncation of an arbitrary backlog vector.
    pub fn truncated_index(&self, q: &[u32]) -> usize {
        let base = self.threshold as usize + 1;
        q.iter()
            .fold(0usize, |id, &x| id * base + x.min(self.threshold) as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = QueueVector> + '_ {
        (0..self.size()).map(move |id| self.vector(id))
    }
}

fn state_count(queues: usize, threshold: u32) -> u128 {
    let base = u128::from(threshold) + 1;
    let mut count: u128 = 1;
    for _ in 0..queues {
        count = count.saturating_mul(base);
    }
    count
}

/// All of `{Q : Q_max <= U}` in lexicographic order.
pub fn enumerate_truncated_states(
    queues: usize,
    threshold: u32,
    cap: usize,
) -> Result<Vec<QueueVector>, StateError> {
    let space = StateSpace::new(queues, threshold, cap)?;
    Ok(space.iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Inner,
    Outer,
}

/// Split of the backlog space at `Q_max <= U - W`. Inner states are where the
/// learned policy acts; everything else falls back to the stabilizing rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    threshold: u32,
    max_change: u32,
}

impl Partition {
    pub fn new(threshold: u32, max_change: u32) -> Result<Self, StateError> {
        if threshold <= max_change {
            return Err(StateError::ThresholdTooSmall {
                threshold,
                max_change,
            });
        }
        Ok(Partition {
            threshold,
            max_change,
        })
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn max_change(&self) -> u32 {
        self.max_change
    }

    /// Largest `Q_max` still counted as inner.
    pub fn inner_limit(&self) -> u32 {
        self.threshold - self.max_change
    }

    pub fn region(&self, q: &[u32]) -> Region {
        if max_backlog(q) <= self.inner_limit() {
            Region::Inner
        } else {
            Region::Outer
        }
    }

    pub fn is_inner(&self, q: &[u32]) -> bool {
        max_backlog(q) <= self.inner_limit()
    }

    pub fn is_truncated_member(&self, q: &[u32]) -> bool {
        max_backlog(q) <= self.threshold
    }

    /// Inner states one slot away from the outer region:
    /// `U - 2W < Q_max <= U - W`.
    pub fn is_boundary(&self, q: &[u32]) -> bool {
        let m = i64::from(max_backlog(q));
        let u = i64::from(self.threshold);
        let w = i64::from(self.max_change);
        u - 2 * w < m && m <= u - w
    }

    /// Ids (in `space`) of the boundary states, ascending.
    pub fn boundary_set(&self, space: &StateSpace) -> Vec<usize> {
        let mut buf = vec![0u32; space.queues()];
        (0..space.size())
            .filter(|&id| {
                space.write_vector(id, &mut buf);
                self.is_boundary(&buf)
            })
            .collect()
    }
}

/// Convenience wrapper returning the region tag for `(Q, U, W)`.
pub fn partition_state(q: &QueueVector, threshold: u32, max_change: u32) -> Result<Region, StateError> {
    Ok(Partition::new(threshold, max_change)?.region(q.as_slice()))
}

/// Boundary ids for `D` queues with threshold `U` and change bound `W`.
pub fn boundary_set(threshold: u32, max_change: u32, queues: usize) -> Result<Vec<usize>, StateError> {
    let partition = Partition::new(threshold, max_change)?;
    let space = StateSpace::with_default_cap(queues, threshold)?;
    Ok(partition.boundary_set(&space))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qv(v: &[u32]) -> QueueVector {
        QueueVector::new(v.to_vec())
    }

    #[test]
    fn enumerates_tiny_spaces_in_lexicographic_order() {
        let one = enumerate_truncated_states(1, 2, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(one, vec![qv(&[0]), qv(&[1]), qv(&[2])]);
        let two = enumerate_truncated_states(2, 1, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(two, vec![qv(&[0, 0]), qv(&[0, 1]), qv(&[1, 0]), qv(&[1, 1])]);
    }

    #[test]
    fn enumeration_count_matches_brute_force() {
        let states = enumerate_truncated_states(2, 10, DEFAULT_STATE_CAP).unwrap();
        let mut brute = Vec::new();
        for a in 0..=10 {
            for b in 0..=10 {
                brute.push(qv(&[a, b]));
            }
        }
        assert_eq!(states.len(), 121);
        assert_eq!(states, brute);
    }

    #[test]
    fn state_cap_is_enforced() {
        let err = enumerate_truncated_states(10, 5, DEFAULT_STATE_CAP).unwrap_err();
        assert!(matches!(err, StateError::StateCountExceeded { count: 60_466_176, .. }));
        assert!(StateSpace::new(10, 5, 100_000_000).is_ok());
        assert!(StateSpace::new(3, 2, 26).is_err());
        assert!(StateSpace::new(3, 2, 27).is_ok());
    }

    #[test]
    fn index_round_trip() {
        let space = StateSpace::with_default_cap(3, 4).unwrap();
        for id in 0..space.size() {
            let v = space.vector(id);
            assert_eq!(space.index_of(v.as_slice()), Some(id));
        }
        assert_eq!(space.index_of(&[5, 0, 0]), None);
        assert_eq!(space.truncated_index(&[9, 0, 2]), space.index_of(&[4, 0, 2]).unwrap());
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(&qv(&[7, 3]), 5), qv(&[5, 3]));
        assert_eq!(truncate(&qv(&[0, 0]), 5), qv(&[0, 0]));
        assert_eq!(truncate(&qv(&[5, 5]), 5), qv(&[5, 5]));
    }

    #[test]
    fn partition_examples() {
        assert_eq!(partition_state(&qv(&[9, 9]), 10, 1).unwrap(), Region::Inner);
        assert_eq!(partition_state(&qv(&[10, 0]), 10, 1).unwrap(), Region::Outer);
        assert_eq!(partition_state(&qv(&[0, 0, 0]), 3, 2).unwrap(), Region::Inner);
        assert!(partition_state(&qv(&[0]), 1, 1).is_err());
        assert!(partition_state(&qv(&[0]), 0, 1).is_err());
    }

    #[test]
    fn boundary_examples() {
        assert_eq!(boundary_set(4, 1, 1).unwrap(), vec![3]);
        assert_eq!(boundary_set(2, 1, 1).unwrap(), vec![1]);
        let space = StateSpace::with_default_cap(2, 3).unwrap();
        let expected: Vec<usize> = (0..space.size())
            .filter(|&id| space.vector(id).max_backlog() == 2)
            .collect();
        assert_eq!(boundary_set(3, 1, 2).unwrap(), expected);
    }

    #[test]
    fn inner_region_lies_inside_truncated_space() {
        for d in 1..=3usize {
            for u in 2..=12u32 {
                if (u as usize + 1).pow(d as u32) > 3000 {
                    continue;
                }
                let space = StateSpace::with_default_cap(d, u).unwrap();
                for w in 1..u {
                    let p = Partition::new(u, w).unwrap();
                    for q in space.iter() {
                        if p.is_inner(q.as_slice()) {
                            assert!(q.max_backlog() <= u);
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn truncate_is_idempotent_and_monotone(
            a in proptest::collection::vec(0u32..40, 1..5),
            bump in proptest::collection::vec(0u32..10, 5),
            u in 0u32..30,
        ) {
            let q = QueueVector::new(a.clone());
            let once = truncate(&q, u);
            prop_assert_eq!(truncate(&once, u), once.clone());
            let bigger: Vec<u32> = a.iter().zip(&bump).map(|(x, b)| x + b).collect();
            let tb = truncate(&QueueVector::new(bigger), u);
            for i in 0..a.len() {
                prop_assert!(once[i] <= tb[i]);
                prop_assert!(once[i] <= u);
            }
        }
    }
}
