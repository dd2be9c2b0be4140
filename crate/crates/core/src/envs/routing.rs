use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{bernoulli, check_rate, CoordinateLaw, EnvError, Environment};
use crate::state::ActionId;

pub const VIA_1: ActionId = ActionId(0);
pub const VIA_2: ActionId = ActionId(1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub lambda: f64,
    /// Backlog cutoff on queue 2 selecting the service-rate regime.
    pub threshold: u32,
    /// `(p_1, p_2)` while `Q_2 <= threshold`.
    pub rates_low: (f64, f64),
    /// `(p_1, p_2)` while `Q_2 > threshold`.
    pub rates_high: (f64, f64),
}

/// Source routes each new packet through relay 1 or relay 2; relay service
/// rates depend on the backlog at relay 2.
#[derive(Debug, Clone)]
pub struct Routing {
    config: RoutingConfig,
}

impl Routing {
    pub fn new(config: RoutingConfig) -> Result<Self, EnvError> {
        check_rate("lambda", config.lambda)?;
        check_rate("rates_low.0", config.rates_low.0)?;
        check_rate("rates_low.1", config.rates_low.1)?;
        check_rate("rates_high.0", config.rates_high.0)?;
        check_rate("rates_high.1", config.rates_high.1)?;
        Ok(Routing { config })
    }

    pub fn config(&self) -> &RoutingConfig {
        &self.config
    }

    /// Service rates in force at the start of a slot in state `q`.
    pub fn rates(&self, q: &[u32]) -> (f64, f64) {
        if q[1] <= self.config.threshold {
            self.config.rates_low
        } else {
            self.config.rates_high
        }
    }
}

/// Always route through relay 1.
pub fn fixed_path(_q: &[u32]) -> ActionId {
    VIA_1
}

impl Environment for Routing {
    fn name(&self) -> &'static str {
        "routing"
    }

    fn queue_count(&self) -> usize {
        2
    }

    fn action_count(&self) -> usize {
        2
    }

    fn action_label(&self, action: ActionId) -> String {
        format!("via-{}", action.0 + 1)
    }

    fn coordinate_laws(&self, q: &[u32], action: ActionId) -> Vec<CoordinateLaw> {
        let (p1, p2) = self.rates(q);
        [p1, p2]
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let dep = if q[i] > 0 { p } else { 0.0 };
                let arr = if action.0 == i { self.config.lambda } else { 0.0 };
                [dep * (1.0 - arr), dep * arr + (1.0 - dep) * (1.0 - arr), (1.0 - dep) * arr]
            })
            .collect()
    }

    fn step_in_place(&self, q: &mut [u32], action: ActionId, rng: &mut dyn RngCore) {
        let (p1, p2) = self.rates(q);
        let d1 = bernoulli(rng, p1);
        let d2 = bernoulli(rng, p2);
        let arrival = bernoulli(rng, self.config.lambda);
        if d1 && q[0] > 0 {
            q[0] -= 1;
        }
        if d2 && q[1] > 0 {
            q[1] -= 1;
        }
        if arrival {
            q[action.0] += 1;
        }
    }

    fn stabilizing_action(&self, q: &[u32]) -> ActionId {
        fixed_path(q)
    }

    fn warnings(&self) -> Vec<String> {
        if self.config.lambda >= self.config.rates_low.0 {
            vec![format!(
                "lambda = {} is not below the relay-1 rate {}; the fixed path does not stabilize",
                self.config.lambda, self.config.rates_low.0
            )]
        } else {
            Vec::new()
        }
    }
}
