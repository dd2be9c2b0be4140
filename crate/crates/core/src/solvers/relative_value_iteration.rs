use super::evaluation::gain_and_bias;
use super::{argmin_actions, SolveError, SolveResult};
use crate::mdp::FiniteMdp;
use crate::state::ActionId;

/// Self-loop weight mixed into every row while iterating. Mixing
/// `P' = (1 - m) P + m I` keeps the gain and the optimal policies and scales
/// the bias by `1 / (1 - m)`, but makes every induced chain aperiodic.
pub const APERIODICITY_MIX: f64 = 0.01;

/// Iterations between checks for a stalled multichain iteration.
const MULTICHAIN_CHECK: usize = 1000;

/// After this many iterations, a greedy policy that held across a whole
/// check window is evaluated exactly and its bias replaces the iterate.
/// Slowly mixing models (sparse estimates) otherwise need millions of sweeps.
const EVALUATE_AFTER: usize = 10_000;

/// Largest model for that exact evaluation.
const EVALUATE_LIMIT: usize = 1500;

/// Relative value iteration for average cost, normalized at state 0.
///
/// Stops once the span of `T h - h` is below `tol`; the reported gain is the
/// midpoint of that span and the bias is rescaled to the original kernel, so
/// `gain + h(s) = c(s) + min_a sum_j p(j | s, a) h(j)` holds to within `tol`.
///
/// If `T h - h` settles to a non-constant vector, the optimal gain differs
/// between states and the span can never shrink; this is reported as
/// [`SolveError::Multichain`] with a policy that first minimizes the expected
/// next gain and breaks ties on the bias.
pub fn relative_value_iteration(mdp: &FiniteMdp, tol: f64, max_iter: usize) -> Result<SolveResult, SolveError> {
    relative_value_iteration_from(mdp, tol, max_iter, None)
}

/// As [`relative_value_iteration`], seeded with a bias vector for the
/// original kernel (for example the previous solve of a nearby model).
pub fn relative_value_iteration_from(
    mdp: &FiniteMdp,
    tol: f64,
    max_iter: usize,
    warm: Option<&[f64]>,
) -> Result<SolveResult, SolveError> {
    let n = mdp.states();
    let cost = mdp.cost();
    let keep = 1.0 - APERIODICITY_MIX;
    // iterate on the bias of the mixed kernel
    let mut h: Vec<f64> = match warm {
        Some(w) if w.len() == n => {
            let base = w[0];
            w.iter().map(|x| (x - base) / keep).collect()
        }
        _ => vec![0.0; n],
    };
    let mut next = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut stable: Option<Vec<ActionId>> = None;
    let mut evaluate = true;
    for iteration in 1..=max_iter {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut drift = 0.0f64;
        for s in 0..n {
            let (_, best) = argmin_actions(mdp.actions(), |a| mdp.expect(s, a, &h));
            next[s] = cost[s] + keep * best + APERIODICITY_MIX * h[s];
            let d = next[s] - h[s];
            drift = drift.max((d - diff[s]).abs());
            diff[s] = d;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        residual = hi - lo;
        let anchor = next[0];
        for (dst, &x) in h.iter_mut().zip(&next) {
            *dst = x - anchor;
        }
        if residual < tol {
            let policy: Vec<ActionId> = (0..n)
                .map(|s| ActionId(argmin_actions(mdp.actions(), |a| mdp.expect(s, a, &h)).0))
                .collect();
            let values = h.iter().map(|x| x * keep).collect();
            return Ok(SolveResult {
                policy,
                values,
                gain: Some(0.5 * (lo + hi)),
                iterations: iteration,
                residual,
            });
        }
        if iteration % MULTICHAIN_CHECK == 0 {
            let policy: Vec<ActionId> = (0..n)
                .map(|s| ActionId(argmin_actions(mdp.actions(), |a| mdp.expect(s, a, &h)).0))
                .collect();
            if drift < tol {
                return Err(SolveError::Multichain {
                    spread: residual,
                    iterations: iteration,
                    policy: gain_first_policy(mdp, &diff, &h),
                });
            }
            if evaluate && iteration >= EVALUATE_AFTER && n <= EVALUATE_LIMIT && stable.as_ref() == Some(&policy) {
                if let Ok((_, bias)) = gain_and_bias(mdp, &policy) {
                    // the mixed kernel's bias is the original one over `keep`
                    let jump: Vec<f64> = bias.iter().map(|b| (b - bias[0]) / keep).collect();
                    // a multichain model is better served by plain iteration
                    if bellman_span(mdp, &jump, keep) < residual {
                        h = jump;
                    } else {
                        evaluate = false;
                    }
                }
            }
            stable = Some(policy);
        }
    }
    Err(SolveError::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Span of `T h - h` on the mixed kernel.
fn bellman_span(mdp: &FiniteMdp, h: &[f64], keep: f64) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in 0..mdp.states() {
        let (_, best) = argmin_actions(mdp.actions(), |a| mdp.expect(s, a, h));
        let d = mdp.cost()[s] + keep * best + (1.0 - keep) * h[s] - h[s];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    hi - lo
}

/// Multichain greedy step: among actions whose expected next gain is
/// minimal, pick the one with the smallest expected bias.
fn gain_first_policy(mdp: &FiniteMdp, gain: &[f64], h: &[f64]) -> Vec<ActionId> {
    (0..mdp.states())
        .map(|s| {
            let next_gain: Vec<f64> = (0..mdp.actions()).map(|a| mdp.expect(s, a, gain)).collect();
            let best = next_gain.iter().copied().fold(f64::INFINITY, f64::min);
            let slack = 1e-6 * (1.0 + best.abs());
            let mut choice = (usize::MAX, f64::INFINITY);
            for (a, &g) in next_gain.iter().enumerate() {
                if g <= best + slack {
                    let v = mdp.expect(s, a, h);
                    if v < choice.1 {
                        choice = (a, v);
                    }
                }
            }
            ActionId(choice.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{true_kernel, EnvConfig};
    use crate::rng::stream;
    use crate::solvers::fixtures::{random_mdp, sparse_random_mdp, two_state_chain};
    use crate::solvers::policy_evaluation_average;
    use crate::state::DEFAULT_STATE_CAP;

    #[test]
    fn separate_closed_classes_are_multichain() {
        // two absorbing states with different costs
        let mdp = FiniteMdp::new(2, 1, vec![vec![(0, 1.0)], vec![(1, 1.0)]], vec![0.0, 3.0]).unwrap();
        match relative_value_iteration(&mdp, 1e-9, 100_000) {
            Err(SolveError::Multichain { spread, policy, .. }) => {
                assert!((spread - 3.0).abs() < 1e-6);
                assert_eq!(policy, vec![ActionId(0); 2]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multichain_policy_prefers_the_cheaper_class() {
        // state 2 can enter either absorbing state
        let mdp = FiniteMdp::new(
            3,
            2,
            vec![
                vec![(0, 1.0)],
                vec![(0, 1.0)],
                vec![(1, 1.0)],
                vec![(1, 1.0)],
                vec![(0, 1.0)],
                vec![(1, 1.0)],
            ],
            vec![5.0, 1.0, 0.0],
        )
        .unwrap();
        match relative_value_iteration(&mdp, 1e-9, 100_000) {
            Err(SolveError::Multichain { policy, .. }) => assert_eq!(policy[2], ActionId(1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multichain_policy_pays_a_transient_cost_for_a_lower_gain() {
        // state 2 jumps to the cost-5 trap, or detours through a cost-100
        // state into the cost-1 trap
        let mdp = FiniteMdp::new(
            4,
            2,
            vec![
                vec![(0, 1.0)],
                vec![(0, 1.0)],
                vec![(1, 1.0)],
                vec![(1, 1.0)],
                vec![(0, 1.0)],
                vec![(3, 1.0)],
                vec![(1, 1.0)],
                vec![(1, 1.0)],
            ],
            vec![5.0, 1.0, 0.0, 100.0],
        )
        .unwrap();
        match relative_value_iteration(&mdp, 1e-9, 100_000) {
            Err(SolveError::Multichain { policy, spread, .. }) => {
                assert_eq!(policy[2], ActionId(1));
                assert!((spread - 4.0).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_cost_identity_kernel() {
        let rows = (0..4).map(|s| vec![(s, 1.0)]).collect();
        let mdp = FiniteMdp::new(4, 1, rows, vec![2.5; 4]).unwrap();
        let r = relative_value_iteration(&mdp, 1e-9, 10_000).unwrap();
        assert!((r.gain.unwrap() - 2.5).abs() < 1e-9);
        assert!(r.values.iter().all(|h| h.abs() < 1e-9));
    }

    #[test]
    fn two_state_chain_average_cost() {
        // policies: stay (gain 1 from state 1) or leave (gain 0)
        let r = relative_value_iteration(&two_state_chain(), 1e-9, 100_000).unwrap();
        assert!(r.gain.unwrap().abs() < 1e-9);
        assert_eq!(r.policy[1], ActionId(1));
        assert_eq!(r.values[0], 0.0);
    }

    #[test]
    fn bellman_equation_holds_on_original_kernel() {
        let mut rng = stream(5, "test", 0);
        for _ in 0..5 {
            let mdp = sparse_random_mdp(&mut rng, 40, 3);
            let r = relative_value_iteration(&mdp, 1e-10, 1_000_000).unwrap();
            let g = r.gain.unwrap();
            for s in 0..mdp.states() {
                let best = (0..mdp.actions())
                    .map(|a| mdp.expect(s, a, &r.values))
                    .fold(f64::INFINITY, f64::min);
                assert!((g + r.values[s] - mdp.cost()[s] - best).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn gain_matches_policy_evaluation() {
        let mut rng = stream(6, "test", 0);
        for _ in 0..10 {
            let mdp = random_mdp(&mut rng, 25, 3);
            let r = relative_value_iteration(&mdp, 1e-9, 100_000).unwrap();
            let rho = policy_evaluation_average(&mdp, &r.policy).unwrap();
            assert!((r.gain.unwrap() - rho).abs() < 1e-6);
        }
        let env = EnvConfig::ServerAllocation { lambda: vec![0.3], p: vec![0.8] }.build().unwrap();
        let mdp = true_kernel(env.as_ref(), 3, DEFAULT_STATE_CAP).unwrap();
        let r = relative_value_iteration(&mdp, 1e-9, 100_000).unwrap();
        let rho = policy_evaluation_average(&mdp, &r.policy).unwrap();
        assert!((r.gain.unwrap() - rho).abs() < 1e-6);
    }

    #[test]
    fn warm_start_reaches_the_same_solution() {
        let mut rng = stream(7, "test", 0);
        let mdp = sparse_random_mdp(&mut rng, 50, 2);
        let cold = relative_value_iteration(&mdp, 1e-10, 1_000_000).unwrap();
        let warm = relative_value_iteration_from(&mdp, 1e-10, 1_000_000, Some(&cold.values)).unwrap();
        assert!(warm.iterations < cold.iterations);
        assert_eq!(warm.policy, cold.policy);
        assert!((warm.gain.unwrap() - cold.gain.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn periodic_chain_converges_with_mixing() {
        // deterministic two-cycle with unequal costs
        let mdp = FiniteMdp::new(2, 1, vec![vec![(1, 1.0)], vec![(0, 1.0)]], vec![0.0, 2.0]).unwrap();
        let r = relative_value_iteration(&mdp, 1e-9, 100_000).unwrap();
        assert!((r.gain.unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(r.values[0], 0.0);
    }
}
