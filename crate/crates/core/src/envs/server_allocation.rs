use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{bernoulli, check_rate, CoordinateLaw, EnvError, Environment};
use crate::state::ActionId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerAllocationConfig {
    /// Bernoulli arrival probability per node.
    pub lambda: Vec<f64>,
    /// Service success probability per node.
    pub p: Vec<f64>,
}

/// One server, `N` nodes. Each slot the server picks a node; its head-of-line
/// packet leaves with probability `p_i`, then every node independently gains
/// a packet with probability `lambda_i`.
#[derive(Debug, Clone)]
pub struct ServerAllocation {
    config: ServerAllocationConfig,
}

impl ServerAllocation {
    pub fn new(config: ServerAllocationConfig) -> Result<Self, EnvError> {
        if config.lambda.is_empty() {
            return Err(EnvError::NoNodes);
        }
        if config.lambda.len() != config.p.len() {
            return Err(EnvError::LengthMismatch {
                lambda: config.lambda.len(),
                p: config.p.len(),
            });
        }
        for (i, (&l, &p)) in config.lambda.iter().zip(&config.p).enumerate() {
            check_rate(format!("lambda[{i}]"), l)?;
            check_rate(format!("p[{i}]"), p)?;
        }
        Ok(ServerAllocation { config })
    }

    pub fn config(&self) -> &ServerAllocationConfig {
        &self.config
    }

    /// `sum_i lambda_i / p_i`; the system is stabilizable when this is below 1.
    pub fn load(&self) -> f64 {
        self.config
            .lambda
            .iter()
            .zip(&self.config.p)
            .map(|(l, p)| if *l == 0.0 { 0.0 } else { l / p })
            .sum()
    }
}

/// Serve the longest queue; ties go to the lowest index.
pub fn longest_queue(q: &[u32]) -> ActionId {
    let mut best = 0;
    for (i, &x) in q.iter().enumerate() {
        if x > q[best] {
            best = i;
        }
    }
    ActionId(best)
}

impl Environment for ServerAllocation {
    fn name(&self) -> &'static str {
        "server_allocation"
    }

    fn queue_count(&self) -> usize {
        self.config.lambda.len()
    }

    fn action_count(&self) -> usize {
        self.config.lambda.len()
    }

    fn action_label(&self, action: ActionId) -> String {
        format!("serve-{}", action.0 + 1)
    }

    fn coordinate_laws(&self, q: &[u32], action: ActionId) -> Vec<CoordinateLaw> {
        q.iter()
            .enumerate()
            .map(|(i, &x)| {
                let dep = if i == action.0 && x > 0 { self.config.p[i] } else { 0.0 };
                let arr = self.config.lambda[i];
                [dep * (1.0 - arr), dep * arr + (1.0 - dep) * (1.0 - arr), (1.0 - dep) * arr]
            })
            .collect()
    }

    fn step_in_place(&self, q: &mut [u32], action: ActionId, rng: &mut dyn RngCore) {
        let served = action.0;
        let success = bernoulli(rng, self.config.p[served]);
        if success && q[served] > 0 {
            q[served] -= 1;
        }
        for (x, &l) in q.iter_mut().zip(&self.config.lambda) {
            if bernoulli(rng, l) {
                *x += 1;
            }
        }
    }

    fn stabilizing_action(&self, q: &[u32]) -> ActionId {
        longest_queue(q)
    }

    fn warnings(&self) -> Vec<String> {
        let load = self.load();
        if load >= 1.0 {
            vec![format!("sum of lambda_i / p_i is {load:.4}, not below 1; no policy stabilizes this system")]
        } else {
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::testing::ScriptedRng;
    use crate::envs::{step, transitions, EnvConfig};
    use crate::state::QueueVector;

    fn two_node() -> ServerAllocation {
        ServerAllocation::new(ServerAllocationConfig {
            lambda: vec![0.3, 0.2],
            p: vec![0.9, 0.6],
        })
        .unwrap()
    }

    #[test]
    fn empty_queues_cannot_depart() {
        let env = two_node();
        for u in [0.0, 0.5, 0.99] {
            let mut rng = ScriptedRng::new(&[u]);
            let next = step(&env, &QueueVector::from([0, 0]), ActionId(0), &mut rng);
            assert!(next.as_slice().iter().all(|&x| x <= 1));
        }
    }

    #[test]
    fn forced_departure_without_arrivals() {
        let env = two_node();
        // departure draw succeeds, both arrival draws fail
        let mut rng = ScriptedRng::new(&[0.0, 0.99, 0.99]);
        let next = step(&env, &QueueVector::from([3, 2]), ActionId(0), &mut rng);
        assert_eq!(next, QueueVector::from([2, 2]));
    }

    #[test]
    fn outcome_distribution_matches_bernoulli_enumeration() {
        let env = two_node();
        let q = QueueVector::from([1, 1]);
        let dist = transitions(&env, &q, ActionId(0));
        // enumerate departure x arrival_1 x arrival_2 directly
        let (l1, l2, p1) = (0.3, 0.2, 0.9);
        let mut brute = std::collections::BTreeMap::new();
        for dep in [true, false] {
            for a1 in [true, false] {
                for a2 in [true, false] {
                    let pr = (if dep { p1 } else { 1.0 - p1 })
                        * (if a1 { l1 } else { 1.0 - l1 })
                        * (if a2 { l2 } else { 1.0 - l2 });
                    let next = vec![1 - dep as u32 + a1 as u32, 1 + a2 as u32];
                    *brute.entry(next).or_insert(0.0) += pr;
                }
            }
        }
        assert_eq!(dist.len(), brute.len());
        for (v, p) in &dist {
            assert!((brute[v.as_slice()] - p).abs() < 1e-15);
        }
        let p00 = dist.iter().find(|(v, _)| v.as_slice() == [0, 1]).unwrap().1;
        assert!((p00 - 0.504).abs() < 1e-12);
    }

    #[test]
    fn longest_queue_examples() {
        assert_eq!(longest_queue(&[3, 5]), ActionId(1));
        assert_eq!(longest_queue(&[4, 4]), ActionId(0));
        assert_eq!(longest_queue(&[0, 0]), ActionId(0));
    }

    #[test]
    fn load_warning() {
        assert!(two_node().warnings().is_empty());
        assert!((two_node().load() - (0.3 / 0.9 + 0.2 / 0.6)).abs() < 1e-12);
        let env = EnvConfig::ServerAllocation {
            lambda: vec![0.5, 0.5],
            p: vec![0.9, 0.6],
        }
        .build()
        .unwrap();
        assert_eq!(env.warnings().len(), 1);
    }
}
