use super::{argmin_actions, check_discount, SolveError, SolveResult};
use crate::mdp::FiniteMdp;
use crate::state::ActionId;

/// Discounted value iteration, stopped once the sup-norm change drops
/// below `tol`. The returned policy is greedy in the final values.
pub fn value_iteration(
    mdp: &FiniteMdp,
    discount: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveResult, SolveError> {
    value_iteration_observed(mdp, discount, tol, max_iter, None, |_, _| {})
}

/// As [`value_iteration`], starting from `warm` (zeros when `None`) and
/// reporting `(iteration, sup-norm change)` after every sweep.
pub fn value_iteration_observed(
    mdp: &FiniteMdp,
    discount: f64,
    tol: f64,
    max_iter: usize,
    warm: Option<&[f64]>,
    mut observe: impl FnMut(usize, f64),
) -> Result<SolveResult, SolveError> {
    check_discount(discount)?;
    let n = mdp.states();
    let cost = mdp.cost();
    let mut values = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![0.0; n],
    };
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        residual = 0.0;
        for s in 0..n {
            let (_, best) = argmin_actions(mdp.actions(), |a| mdp.expect(s, a, &values));
            next[s] = cost[s] + discount * best;
            residual = f64::max(residual, (next[s] - values[s]).abs());
        }
        std::mem::swap(&mut values, &mut next);
        observe(iteration, residual);
        if residual < tol {
            let policy = greedy(mdp, &values);
            return Ok(SolveResult {
                policy,
                values,
                gain: None,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(SolveError::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Greedy policy for discounted or relative values: the cost term is the
/// same for every action at a state, so only the expectation matters.
pub(crate) fn greedy(mdp: &FiniteMdp, values: &[f64]) -> Vec<ActionId> {
    (0..mdp.states())
        .map(|s| ActionId(argmin_actions(mdp.actions(), |a| mdp.expect(s, a, values)).0))
        .collect()
}
