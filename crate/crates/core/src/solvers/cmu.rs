use crate::counts::TransitionCounts;
use crate::state::{ActionId, StateSpace};

/// Serve the nonempty node with the largest service-rate estimate. When every
/// node is empty the globally largest estimate wins; ties go to the lowest
/// index.
#[derive(Debug, Clone, PartialEq)]
pub struct CmuRule {
    rates: Vec<f64>,
}

impl CmuRule {
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn decide(&self, q: &[u32]) -> ActionId {
        let pick = |nonempty_only: bool| {
            let mut best: Option<usize> = None;
            for (i, &r) in self.rates.iter().enumerate() {
                if nonempty_only && q[i] == 0 {
                    continue;
                }
                if best.map_or(true, |b| r > self.rates[b]) {
                    best = Some(i);
                }
            }
            best
        };
        ActionId(pick(true).or_else(|| pick(false)).unwrap_or(0))
    }
}

pub fn cmu_solve(p_estimates: &[f64]) -> CmuRule {
    CmuRule {
        rates: p_estimates.to_vec(),
    }
}

/// Per-node service-rate estimates for server allocation from truncated
/// transition counts.
///
/// While node `i` is served and nonempty its backlog drops by one with
/// probability `p_i (1 - lambda_i)`. Slots where `i` is not served (or is
/// served empty) and `Q_i < U` estimate `lambda_i` from the rate of +1 moves.
/// Nodes never served while nonempty get estimate 0.
pub fn service_rates_from_counts(counts: &TransitionCounts, space: &StateSpace) -> Vec<f64> {
    let nodes = space.queues();
    let u = space.threshold();
    let mut served = vec![0u64; nodes];
    let mut dropped = vec![0u64; nodes];
    let mut idle = vec![0u64; nodes];
    let mut grew = vec![0u64; nodes];
    let mut q = vec![0u32; nodes];
    let mut q_next = vec![0u32; nodes];
    for (s, a) in counts.visited_keys() {
        space.write_vector(s, &mut q);
        for &(next, c) in counts.transitions(s, a) {
            space.write_vector(next, &mut q_next);
            for i in 0..nodes {
                if i == a && q[i] > 0 {
                    served[i] += c;
                    if q_next[i] + 1 == q[i] {
                        dropped[i] += c;
                    }
                } else if q[i] < u {
                    idle[i] += c;
                    if q_next[i] == q[i] + 1 {
                        grew[i] += c;
                    }
                }
            }
        }
    }
    (0..nodes)
        .map(|i| {
            if served[i] == 0 {
                return 0.0;
            }
            let lambda = if idle[i] > 0 { grew[i] as f64 / idle[i] as f64 } else { 0.0 };
            let down = dropped[i] as f64 / served[i] as f64;
            if lambda >= 1.0 {
                1.0
            } else {
                (down / (1.0 - lambda)).clamp(0.0, 1.0)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvConfig;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn picks_fastest_nonempty_node() {
        let rule = cmu_solve(&[0.3, 0.8, 0.5]);
        assert_eq!(rule.decide(&[2, 0, 1]), ActionId(2));
        assert_eq!(rule.decide(&[1, 1, 1]), ActionId(1));
        assert_eq!(rule.decide(&[0, 0, 0]), ActionId(1));
        assert_eq!(cmu_solve(&[0.5, 0.5]).decide(&[3, 3]), ActionId(0));
    }

    #[test]
    fn estimates_recover_service_rates() {
        let cfg = EnvConfig::ServerAllocation {
            lambda: vec![0.2, 0.1, 0.15],
            p: vec![0.55, 0.9, 0.7],
        };
        let env = cfg.build().unwrap();
        let space = StateSpace::new(3, 6, usize::MAX).unwrap();
        let mut counts = TransitionCounts::new(3);
        let mut rng = stream(12, "test", 0);
        let mut q = vec![0u32; 3];
        for _ in 0..400_000 {
            let a = ActionId(rng.gen_range(0..3));
            let s = space.truncated_index(&q);
            env.step_in_place(&mut q, a, &mut rng);
            if q.iter().any(|&x| x > 6) {
                // keep the walk inside the truncated space
                for x in q.iter_mut() {
                    *x = (*x).min(6);
                }
            }
            counts.record(s, a.0, space.truncated_index(&q));
        }
        let rates = service_rates_from_counts(&counts, &space);
        for (est, truth) in rates.iter().zip([0.55, 0.9, 0.7]) {
            assert!((est - truth).abs() < 0.02, "{rates:?}");
        }
    }
}
