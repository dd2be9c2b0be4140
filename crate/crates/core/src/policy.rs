//! Piecewise policies: a learned or random rule on an inner region, the
//! environment's stabilizing rule everywhere else.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::baselines::uniform_random;
use crate::envs::Environment;
use crate::solvers::CmuRule;
use crate::state::{ActionId, Partition, StateSpace};

/// Where the inner rule applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerRegion {
    /// `Q_max <= U`.
    Truncated,
    /// `Q_max <= U - W`.
    Inner,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InnerRule {
    /// Fresh uniform draw every slot.
    Uniform,
    /// Action per truncated state id.
    Table(Arc<Vec<ActionId>>),
    Cmu(CmuRule),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolicy {
    rule: InnerRule,
    region: InnerRegion,
    partition: Partition,
    space: StateSpace,
}

impl PiecewisePolicy {
    /// Uniform on the truncated space, stabilizing rule outside.
    pub fn exploration(space: StateSpace, partition: Partition) -> Self {
        PiecewisePolicy {
            rule: InnerRule::Uniform,
            region: InnerRegion::Truncated,
            partition,
            space,
        }
    }

    /// `table` on the inner region, stabilizing rule outside. The table is
    /// indexed by truncated state id and must cover the whole space.
    pub fn exploitation(table: Arc<Vec<ActionId>>, space: StateSpace, partition: Partition) -> Self {
        assert_eq!(table.len(), space.size(), "policy table must cover the truncated space");
        PiecewisePolicy {
            rule: InnerRule::Table(table),
            region: InnerRegion::Inner,
            partition,
            space,
        }
    }

    pub fn with_cmu(rule: CmuRule, space: StateSpace, partition: Partition) -> Self {
        PiecewisePolicy {
            rule: InnerRule::Cmu(rule),
            region: InnerRegion::Inner,
            partition,
            space,
        }
    }

    pub fn rule(&self) -> &InnerRule {
        &self.rule
    }

    pub fn region(&self) -> InnerRegion {
        self.region
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn table(&self) -> Option<&Arc<Vec<ActionId>>> {
        match &self.rule {
            InnerRule::Table(t) => Some(t),
            _ => None,
        }
    }

    pub fn in_region(&self, q: &[u32]) -> bool {
        match self.region {
            InnerRegion::Truncated => self.partition.is_truncated_member(q),
            InnerRegion::Inner => self.partition.is_inner(q),
        }
    }

    /// Action at `q`, defined on the whole state space.
    pub fn decide(&self, q: &[u32], env: &dyn Environment, rng: &mut dyn RngCore) -> ActionId {
        if !self.in_region(q) {
            return env.stabilizing_action(q);
        }
        match &self.rule {
            InnerRule::Uniform => uniform_random(env.action_count(), rng),
            InnerRule::Table(table) => {
                let id = self.space.index_of(q).expect("inner states lie in the truncated space");
                table[id]
            }
            InnerRule::Cmu(rule) => rule.decide(q),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvConfig;
    use crate::rng::stream;

    #[test]
    fn falls_back_outside_region() {
        let env = EnvConfig::two_node_default().build().unwrap();
        let space = StateSpace::with_default_cap(2, 4).unwrap();
        let partition = Partition::new(4, 1).unwrap();
        // a table that always serves node 2
        let table = Arc::new(vec![ActionId(1); space.size()]);
        let policy = PiecewisePolicy::exploitation(table, space, partition);
        let mut rng = stream(0, "test", 0);
        assert_eq!(policy.decide(&[3, 0], env.as_ref(), &mut rng), ActionId(1));
        // Q_max = 4 is outer: longest queue serves node 1
        assert_eq!(policy.decide(&[4, 0], env.as_ref(), &mut rng), ActionId(0));
        assert_eq!(policy.decide(&[40, 2], env.as_ref(), &mut rng), ActionId(0));

        let explore = PiecewisePolicy::exploration(space, partition);
        assert!(explore.in_region(&[4, 4]));
        assert!(!explore.in_region(&[5, 0]));
        assert_eq!(explore.decide(&[9, 0], env.as_ref(), &mut rng), ActionId(0));
    }
}
