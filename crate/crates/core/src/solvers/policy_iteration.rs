use nalgebra::{DMatrix, DVector};

use super::value_iteration::greedy;
use super::{check_discount, SolveError, SolveResult, DENSE_LIMIT};
use crate::mdp::FiniteMdp;
use crate::state::ActionId;

/// Discounted policy iteration starting from action 0 everywhere.
pub fn policy_iteration(mdp: &FiniteMdp, discount: f64, max_iter: usize) -> Result<SolveResult, SolveError> {
    check_discount(discount)?;
    let mut policy = vec![ActionId(0); mdp.states()];
    let mut values = Vec::new();
    for round in 1..=max_iter {
        values = evaluate_discounted(mdp, &policy, discount)?;
        let improved = greedy(mdp, &values);
        if improved == policy {
            return Ok(SolveResult {
                policy,
                values,
                gain: None,
                iterations: round,
                residual: 0.0,
            });
        }
        policy = improved;
    }
    let residual = {
        let fresh = evaluate_discounted(mdp, &policy, discount)?;
        fresh
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    Err(SolveError::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Solves `(I - discount * P_policy) v = c`.
///
/// Dense LU up to [`DENSE_LIMIT`] states; above that, fixed-policy sweeps
/// until the sup-norm change is below `1e-12`.
pub fn evaluate_discounted(mdp: &FiniteMdp, policy: &[ActionId], discount: f64) -> Result<Vec<f64>, SolveError> {
    check_discount(discount)?;
    let n = mdp.states();
    if policy.len() != n {
        return Err(SolveError::PolicyShape {
            expected: n,
            got: policy.len(),
        });
    }
    if n <= DENSE_LIMIT {
        let mut a = DMatrix::<f64>::identity(n, n);
        for (s, act) in policy.iter().enumerate() {
            let (targets, probs) = mdp.row(s, act.index());
            for (&j, &p) in targets.iter().zip(probs) {
                a[(s, j as usize)] -= discount * p;
            }
        }
        let b = DVector::from_column_slice(mdp.cost());
        let v = a.lu().solve(&b).ok_or(SolveError::Singular)?;
        return Ok(v.iter().copied().collect());
    }
    let cost = mdp.cost();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    // contraction factor `discount`; bail out well after the 1e-12 horizon
    let limit = ((1e-12f64).ln() / discount.ln()).ceil() as usize * 4 + 100;
    for _ in 0..limit {
        let mut change: f64 = 0.0;
        for s in 0..n {
            next[s] = cost[s] + discount * mdp.expect(s, policy[s].index(), &v);
            change = change.max((next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if change < 1e-12 {
            return Ok(v);
        }
    }
    Err(SolveError::NotConverged {
        iterations: limit,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::solvers::fixtures::{random_mdp, sparse_random_mdp, two_state_chain};
    use crate::solvers::value_iteration;

    #[test]
    fn single_action_converges_in_one_round() {
        let mut rng = stream(8, "test", 0);
        let mdp = random_mdp(&mut rng, 10, 1);
        let r = policy_iteration(&mdp, 0.99, 100).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.policy.iter().all(|&a| a == ActionId(0)));
    }

    #[test]
    fn two_state_chain_example() {
        let r = policy_iteration(&two_state_chain(), 0.9, 100).unwrap();
        assert_eq!(r.policy[1], ActionId(1));
        assert!((r.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn agrees_with_value_iteration_on_random_mdps() {
        let mut rng = stream(9, "test", 0);
        for i in 0..25 {
            let states = 5 + i * 2;
            let actions = 2 + i % 3;
            let mdp = if i % 2 == 0 {
                random_mdp(&mut rng, states, actions)
            } else {
                sparse_random_mdp(&mut rng, states, actions)
            };
            let pi = policy_iteration(&mdp, 0.99, 1000).unwrap();
            let vi = value_iteration(&mdp, 0.99, 1e-9, 1_000_000).unwrap();
            assert_eq!(pi.policy, vi.policy, "instance {i}");
        }
    }

    #[test]
    fn iterative_evaluation_matches_dense() {
        let mut rng = stream(10, "test", 0);
        let mdp = sparse_random_mdp(&mut rng, DENSE_LIMIT + 1, 2);
        let policy = vec![ActionId(1); mdp.states()];
        let v = evaluate_discounted(&mdp, &policy, 0.9).unwrap();
        for s in (0..mdp.states()).step_by(97) {
            let rhs = mdp.cost()[s] + 0.9 * mdp.expect(s, 1, &v);
            assert!((v[s] - rhs).abs() < 1e-10);
        }
    }
}
