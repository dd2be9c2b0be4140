use std::sync::Mutex;

use proptest::prelude::*;
use rand::RngCore;

use rlqn_core::diagnostics::episode_count_bound;
use rlqn_core::envs::CoordinateLaw;
use rlqn_core::rlqn::{episode_budget, epsilon_k, run, Learner, LearnedPolicy, Mode, RlqnConfig, RlqnError};
use rlqn_core::rng::stream;
use rlqn_core::solvers::SolverChoice;
use rlqn_core::{ActionId, EnvConfig, Environment, Partition, QueueVector};

/// Delegates to an environment and logs every (state, action) it is asked
/// to step.
struct Recording {
    inner: Box<dyn Environment>,
    log: Mutex<Vec<(Vec<u32>, ActionId)>>,
}

impl Recording {
    fn new(config: EnvConfig) -> Self {
        Recording {
            inner: config.build().unwrap(),
            log: Mutex::new(Vec::new()),
        }
    }
}

impl Environment for Recording {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn queue_count(&self) -> usize {
        self.inner.queue_count()
    }
    fn action_count(&self) -> usize {
        self.inner.action_count()
    }
    fn action_label(&self, action: ActionId) -> String {
        self.inner.action_label(action)
    }
    fn max_change(&self) -> u32 {
        self.inner.max_change()
    }
    fn coordinate_laws(&self, q: &[u32], action: ActionId) -> Vec<CoordinateLaw> {
        self.inner.coordinate_laws(q, action)
    }
    fn step_in_place(&self, q: &mut [u32], action: ActionId, rng: &mut dyn RngCore) {
        self.log.lock().unwrap().push((q.to_vec(), action));
        self.inner.step_in_place(q, action, rng)
    }
    fn stabilizing_action(&self, q: &[u32]) -> ActionId {
        self.inner.stabilizing_action(q)
    }
}

fn two_node() -> Box<dyn Environment> {
    EnvConfig::two_node_default().build().unwrap()
}

#[test]
fn exploration_and_budget_examples() {
    assert_eq!(epsilon_k(1.0, 1), 1.0);
    assert_eq!(epsilon_k(1.0, 4), 0.5);
    assert!((epsilon_k(0.3, 9) - 0.1).abs() < 1e-15);
    assert_eq!(episode_budget(50.0, 1), 50);
    assert_eq!(episode_budget(50.0, 2), 71);
    assert_eq!(episode_budget(50.0, 4), 100);
    assert_eq!(episode_budget(1.0, 1), 1);
}

#[test]
fn single_episode_explores() {
    let env = two_node();
    let out = run(env.as_ref(), RlqnConfig::new(5, 50.0, 1)).unwrap();
    assert_eq!(out.episodes.len(), 1);
    assert_eq!(out.episodes[0].mode, Mode::Explore);
    assert_eq!(out.episodes[0].inner_visits, 50);
}

#[test]
fn unit_budget_from_empty_takes_one_slot() {
    let env = two_node();
    let out = run(env.as_ref(), RlqnConfig::new(5, 1.0, 1)).unwrap();
    assert_eq!(out.total_slots, 1);
    assert_eq!(out.episodes[0].length, 1);
    assert_eq!(out.cumulative_backlog, 0);
}

#[test]
fn episodes_meet_their_budget_exactly() {
    let env = two_node();
    let mut c = RlqnConfig::new(4, 20.0, 60);
    c.seed = 3;
    let out = run(env.as_ref(), c).unwrap();
    let mut slots = 0;
    let mut backlog = 0;
    for r in &out.episodes {
        assert_eq!(r.inner_visits, episode_budget(20.0, r.k));
        assert!(r.length >= r.inner_visits);
        assert_eq!(r.start_slot, slots);
        slots += r.length;
        backlog += r.backlog_sum;
    }
    assert_eq!(slots, out.total_slots);
    assert_eq!(backlog, out.cumulative_backlog);
    // every slot that starts in the truncated space feeds the counts
    assert!(out.counts.total_updates() <= out.total_slots);
    out.counts.check_consistency().unwrap();
    let bound = episode_count_bound(out.total_slots as f64, 20.0);
    assert!(out.episodes.len() as f64 <= bound + 1.0);
}

#[test]
fn outer_states_get_the_stabilizing_rule() {
    for config in [EnvConfig::two_node_default(), EnvConfig::routing_default(), EnvConfig::switch_asymmetric()] {
        let env = Recording::new(config);
        let mut c = RlqnConfig::new(3, 10.0, 40);
        c.seed = 11;
        c.exploration = 0.5;
        let out = run(&env, c).unwrap();
        let partition = Partition::new(3, env.max_change()).unwrap();
        let log = env.log.lock().unwrap();
        assert_eq!(log.len() as u64, out.total_slots);
        let mut checked = [0usize; 2];
        for r in &out.episodes {
            let slots = &log[r.start_slot as usize..(r.start_slot + r.length) as usize];
            for (q, a) in slots {
                // exploration is uniform on the whole truncated space
                let outside = match r.mode {
                    Mode::Exploit => !partition.is_inner(q),
                    Mode::Explore => !partition.is_truncated_member(q),
                };
                if outside {
                    assert_eq!(*a, env.stabilizing_action(q), "{} {:?} at {q:?}", env.name(), r.mode);
                    checked[(r.mode == Mode::Exploit) as usize] += 1;
                }
            }
        }
        assert!(checked[1] > 0, "{} never left the inner region while exploiting", env.name());
    }
}

#[test]
fn exploitation_acts_on_the_solved_table() {
    let env = two_node();
    let mut c = RlqnConfig::new(5, 30.0, 30);
    c.exploration = 0.01;
    let mut learner = Learner::new(env.as_ref(), c).unwrap();
    let (mode, policy, _, _) = learner.select_episode_policy(1).unwrap();
    assert_eq!(mode, Mode::Exploit);
    learner.run_episode(1, mode, &policy, 200, &mut |_| {}).unwrap();
    let (mode, policy, changed, _) = learner.select_episode_policy(2).unwrap();
    assert_eq!(mode, Mode::Exploit);
    assert!(changed);
    let table = policy.table().unwrap().clone();
    let mut rng = stream(0, "check", 0);
    for q in learner.space().iter() {
        let a = policy.decide(q.as_slice(), env.as_ref(), &mut rng);
        if learner.partition().is_inner(q.as_slice()) {
            assert_eq!(a, table[learner.space().index_of(q.as_slice()).unwrap()]);
        } else {
            assert_eq!(a, env.stabilizing_action(q.as_slice()));
        }
    }
    // no new data, so the cached table is reused
    let (_, again, changed, _) = learner.select_episode_policy(3).unwrap();
    assert!(!changed);
    assert_eq!(again.table().unwrap().as_slice(), table.as_slice());
}

#[test]
fn reruns_are_identical() {
    let env = EnvConfig::routing_default().build().unwrap();
    let mut c = RlqnConfig::new(6, 20.0, 80);
    c.seed = 42;
    let a = run(env.as_ref(), c.clone()).unwrap();
    let b = run(env.as_ref(), c.clone()).unwrap();
    assert_eq!(a.episodes, b.episodes);
    assert_eq!(a.total_slots, b.total_slots);
    assert_eq!(a.cumulative_backlog, b.cumulative_backlog);
    assert_eq!(a.counts, b.counts);
    match (&a.final_policy, &b.final_policy) {
        (LearnedPolicy::Table { solve: x }, LearnedPolicy::Table { solve: y }) => assert_eq!(x.policy, y.policy),
        _ => panic!("table policies expected"),
    }
    c.seed = 43;
    let other = run(env.as_ref(), c).unwrap();
    assert_ne!(a.cumulative_backlog, other.cumulative_backlog);
}

#[test]
fn metrics_rows_match_the_trajectory() {
    let env = two_node();
    let mut c = RlqnConfig::new(4, 10.0, 20);
    c.metrics_stride = 1;
    let mut rows = Vec::new();
    let out = Learner::new(env.as_ref(), c).unwrap().run(&mut |r| rows.push(r.clone())).unwrap();
    assert_eq!(rows.len() as u64, out.total_slots);
    let mut cumulative = 0;
    for (i, r) in rows.iter().enumerate() {
        cumulative += r.total_backlog;
        assert_eq!(r.t, i as u64 + 1);
        assert_eq!(r.cumulative_backlog, cumulative);
        assert!((r.running_avg - cumulative as f64 / r.t as f64).abs() < 1e-9);
    }
}

#[test]
fn thinned_metrics_end_on_the_last_slot() {
    let env = two_node();
    let mut c = RlqnConfig::new(4, 10.0, 20);
    c.metrics_stride = 7;
    let mut rows = Vec::new();
    let out = Learner::new(env.as_ref(), c).unwrap().run(&mut |r| rows.push(r.t)).unwrap();
    assert_eq!(rows[0], 1);
    assert_eq!(rows[1], 8);
    assert_eq!(*rows.last().unwrap(), out.total_slots);
}

#[test]
fn slot_cap_stops_after_the_current_episode() {
    let env = two_node();
    let mut c = RlqnConfig::new(4, 10.0, 1000);
    c.max_slots = Some(500);
    let out = run(env.as_ref(), c).unwrap();
    assert!(out.episodes.len() < 1000);
    assert!(out.total_slots >= 500);
    let before = out.total_slots - out.episodes.last().unwrap().length;
    assert!(before < 500);
}

#[test]
fn invalid_configs_are_rejected() {
    let env = two_node();
    let mut c = RlqnConfig::new(5, 10.0, 10);
    c.exploration = 0.0;
    assert!(matches!(run(env.as_ref(), c), Err(RlqnError::Config(_))));
    let mut c = RlqnConfig::new(5, 10.0, 10);
    c.budget_scale = -1.0;
    assert!(matches!(run(env.as_ref(), c), Err(RlqnError::Config(_))));
    assert!(matches!(run(env.as_ref(), RlqnConfig::new(5, 10.0, 0)), Err(RlqnError::Config(_))));
    assert!(matches!(run(env.as_ref(), RlqnConfig::new(1, 10.0, 5)), Err(RlqnError::State(_))));
    let mut c = RlqnConfig::new(5, 10.0, 10);
    c.initial_state = Some(QueueVector::new(vec![0, 0, 0]));
    assert!(matches!(run(env.as_ref(), c), Err(RlqnError::Config(_))));
    let switch = EnvConfig::switch_heavy().build().unwrap();
    let mut c = RlqnConfig::new(5, 10.0, 10);
    c.solver = SolverChoice::Cmu;
    assert!(matches!(run(switch.as_ref(), c), Err(RlqnError::Config(_))));
}

#[test]
fn cmu_learner_serves_the_faster_node() {
    let env = two_node();
    let mut c = RlqnConfig::new(5, 50.0, 100);
    c.solver = SolverChoice::Cmu;
    let out = run(env.as_ref(), c).unwrap();
    match out.final_policy {
        LearnedPolicy::Cmu(rule) => assert_eq!(rule.decide(&[2, 2]), ActionId(0)),
        _ => panic!("cmu policy expected"),
    }
}

#[test]
fn starts_from_a_deep_state_and_drains() {
    let env = two_node();
    let mut c = RlqnConfig::new(5, 10.0, 5);
    c.initial_state = Some(QueueVector::new(vec![30, 30]));
    let out = run(env.as_ref(), c).unwrap();
    assert!(out.episodes[0].length > out.episodes[0].inner_visits);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn episode_count_never_exceeds_the_bound(seed in 0u64..1000, scale in 1.0f64..40.0, k in 1usize..60) {
        let env = two_node();
        let mut c = RlqnConfig::new(4, scale, k);
        c.seed = seed;
        let out = run(env.as_ref(), c).unwrap();
        let bound = episode_count_bound(out.total_slots as f64, scale);
        prop_assert!(out.episodes.len() as f64 <= bound + 1.0);
        out.counts.check_consistency().unwrap();
    }

    #[test]
    fn inner_visits_equal_budgets(seed in 0u64..1000, scale in 1.0f64..30.0) {
        let env = EnvConfig::switch_asymmetric().build().unwrap();
        let mut c = RlqnConfig::new(3, scale, 15);
        c.seed = seed;
        let out = run(env.as_ref(), c).unwrap();
        for r in &out.episodes {
            prop_assert_eq!(r.inner_visits, episode_budget(scale, r.k));
        }
    }
}
