use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{bernoulli, check_rate, CoordinateLaw, EnvError, Environment};
use crate::state::ActionId;

/// Input 1 to output 1 and input 2 to output 2.
pub const PARALLEL: ActionId = ActionId(0);
/// Input 1 to output 2 and input 2 to output 1.
pub const CROSSED: ActionId = ActionId(1);

// queue order: (1,1), (1,2), (2,1), (2,2)
const SERVED: [[bool; 4]; 2] = [[true, false, false, true], [false, true, true, false]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchConfig {
    /// `lambda[i][j]`: arrival probability at input `i` for output `j`.
    pub lambda: [[f64; 2]; 2],
}

/// 2x2 input-queued switch with virtual output queues stored row-major as
/// `[Q11, Q12, Q21, Q22]`. A matched nonempty queue always sends one packet.
#[derive(Debug, Clone)]
pub struct Switch {
    config: SwitchConfig,
    rates: [f64; 4],
}

impl Switch {
    pub fn new(config: SwitchConfig) -> Result<Self, EnvError> {
        for i in 0..2 {
            for j in 0..2 {
                check_rate(format!("lambda_matrix[{i}][{j}]"), config.lambda[i][j])?;
            }
        }
        let l = config.lambda;
        Ok(Switch {
            rates: [l[0][0], l[0][1], l[1][0], l[1][1]],
            config,
        })
    }

    pub fn config(&self) -> &SwitchConfig {
        &self.config
    }
}

/// Matching with the larger connected backlog; ties go to the parallel one.
pub fn max_matching(q: &[u32]) -> ActionId {
    let parallel = u64::from(q[0]) + u64::from(q[3]);
    let crossed = u64::from(q[1]) + u64::from(q[2]);
    if crossed > parallel {
        CROSSED
    } else {
        PARALLEL
    }
}

impl Environment for Switch {
    fn name(&self) -> &'static str {
        "switch"
    }

    fn queue_count(&self) -> usize {
        4
    }

    fn action_count(&self) -> usize {
        2
    }

    fn action_label(&self, action: ActionId) -> String {
        match action {
            PARALLEL => "parallel".to_string(),
            _ => "crossed".to_string(),
        }
    }

    fn coordinate_laws(&self, q: &[u32], action: ActionId) -> Vec<CoordinateLaw> {
        (0..4)
            .map(|k| {
                let dep = if SERVED[action.0][k] && q[k] > 0 { 1.0 } else { 0.0 };
                let arr = self.rates[k];
                [dep * (1.0 - arr), dep * arr + (1.0 - dep) * (1.0 - arr), (1.0 - dep) * arr]
            })
            .collect()
    }

    fn step_in_place(&self, q: &mut [u32], action: ActionId, rng: &mut dyn RngCore) {
        for (k, x) in q.iter_mut().enumerate() {
            if SERVED[action.0][k] && *x > 0 {
                *x -= 1;
            }
        }
        for (x, &l) in q.iter_mut().zip(&self.rates) {
            if bernoulli(rng, l) {
                *x += 1;
            }
        }
    }

    fn stabilizing_action(&self, q: &[u32]) -> ActionId {
        max_matching(q)
    }

    fn warnings(&self) -> Vec<String> {
        let l = self.config.lambda;
        let mut out = Vec::new();
        for i in 0..2 {
            let row = l[i][0] + l[i][1];
            if row >= 1.0 {
                out.push(format!("input {} load {row:.4} is not below 1", i + 1));
            }
            let col = l[0][i] + l[1][i];
            if col >= 1.0 {
                out.push(format!("output {} load {col:.4} is not below 1", i + 1));
            }
        }
        out
    }
}
