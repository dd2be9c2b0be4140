use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::{SolveError, DENSE_LIMIT};
use crate::mdp::FiniteMdp;
use crate::state::ActionId;

/// Long-run average cost of a stationary deterministic policy.
///
/// The induced chain must have a single closed class; transient states get
/// stationary mass 0.
pub fn policy_evaluation_average(mdp: &FiniteMdp, policy: &[ActionId]) -> Result<f64, SolveError> {
    let pi = stationary_distribution(mdp, policy)?;
    Ok(pi.iter().zip(mdp.cost()).map(|(p, c)| p * c).sum())
}

/// Stationary distribution of the chain induced by `policy`.
pub fn stationary_distribution(mdp: &FiniteMdp, policy: &[ActionId]) -> Result<Vec<f64>, SolveError> {
    let n = mdp.states();
    if policy.len() != n {
        return Err(SolveError::PolicyShape {
            expected: n,
            got: policy.len(),
        });
    }
    let class = closed_class(mdp, policy)?;
    let m = class.len();
    let mut local = vec![usize::MAX; n];
    for (k, &s) in class.iter().enumerate() {
        local[s] = k;
    }
    let weights = if m <= DENSE_LIMIT {
        // pi (P - I) = 0 with the last balance equation replaced by sum(pi) = 1
        let mut a = DMatrix::<f64>::zeros(m, m);
        for (k, &s) in class.iter().enumerate() {
            let (targets, probs) = mdp.row(s, policy[s].index());
            for (&j, &p) in targets.iter().zip(probs) {
                a[(local[j as usize], k)] += p;
            }
            a[(k, k)] -= 1.0;
        }
        for k in 0..m {
            a[(m - 1, k)] = 1.0;
        }
        let mut b = DVector::zeros(m);
        b[m - 1] = 1.0;
        let x = a.lu().solve(&b).ok_or(SolveError::Singular)?;
        x.iter().copied().collect::<Vec<f64>>()
    } else {
        power_iteration(mdp, policy, &class, &local)?
    };
    let mut pi = vec![0.0; n];
    for (k, &s) in class.iter().enumerate() {
        pi[s] = weights[k].max(0.0);
    }
    let total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= total;
    }
    Ok(pi)
}

/// Gain and bias of a unichain policy from the dense linear system
/// `g + h(s) - sum_j p(j | s) h(j) = c(s)`, with `h = 0` at the first state
/// of the closed class.
pub fn gain_and_bias(mdp: &FiniteMdp, policy: &[ActionId]) -> Result<(f64, Vec<f64>), SolveError> {
    let n = mdp.states();
    let reference = closed_class(mdp, policy)?[0];
    let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut b = DVector::zeros(n + 1);
    for s in 0..n {
        let (targets, probs) = mdp.row(s, policy[s].index());
        for (&j, &p) in targets.iter().zip(probs) {
            a[(s, j as usize)] -= p;
        }
        a[(s, s)] += 1.0;
        a[(s, n)] = 1.0;
        b[s] = mdp.cost()[s];
    }
    a[(n, reference)] = 1.0;
    let x = a.lu().solve(&b).ok_or(SolveError::Singular)?;
    Ok((x[n], x.iter().take(n).copied().collect()))
}

/// The unique closed communicating class of the induced chain, ascending.
pub(crate) fn closed_class(mdp: &FiniteMdp, policy: &[ActionId]) -> Result<Vec<usize>, SolveError> {
    let n = mdp.states();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, mdp.nonzeros());
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (s, act) in policy.iter().enumerate() {
        for &j in mdp.row(s, act.index()).0 {
            graph.add_edge(nodes[s], nodes[j as usize], ());
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut component = vec![0usize; n];
    for (c, members) in sccs.iter().enumerate() {
        for node in members {
            component[node.index()] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members.iter().all(|node| {
                let s = node.index();
                mdp.row(s, policy[s].index())
                    .0
                    .iter()
                    .all(|&j| component[j as usize] == *c)
            })
        })
        .map(|(_, members)| {
            let mut ids: Vec<usize> = members.iter().map(|x| x.index()).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    closed.sort();
    if closed.len() == 1 {
        Ok(closed.pop().unwrap())
    } else {
        let first = &closed[0];
        let unreachable = (0..n).filter(|s| first.binary_search(s).is_err()).collect();
        Err(SolveError::Reducible {
            classes: closed.len(),
            unreachable,
        })
    }
}

fn power_iteration(
    mdp: &FiniteMdp,
    policy: &[ActionId],
    class: &[usize],
    local: &[usize],
) -> Result<Vec<f64>, SolveError> {
    let m = class.len();
    let mix = super::APERIODICITY_MIX;
    let mut x = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    let max_iter = 5_000_000;
    for _ in 0..max_iter {
        for (k, v) in next.iter_mut().enumerate() {
            *v = mix * x[k];
        }
        for (k, &s) in class.iter().enumerate() {
            let (targets, probs) = mdp.row(s, policy[s].index());
            for (&j, &p) in targets.iter().zip(probs) {
                next[local[j as usize]] += (1.0 - mix) * p * x[k];
            }
        }
        let change = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>();
        std::mem::swap(&mut x, &mut next);
        if change < 1e-15 {
            return Ok(x);
        }
    }
    Err(SolveError::NotConverged {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_state_gain_is_its_cost() {
        let mdp = FiniteMdp::new(1, 1, vec![vec![(0, 1.0)]], vec![7.0]).unwrap();
        assert_eq!(policy_evaluation_average(&mdp, &[ActionId(0)]).unwrap(), 7.0);
    }

    #[test]
    fn swap_chain_is_uniform() {
        let mdp = FiniteMdp::new(2, 1, vec![vec![(1, 1.0)], vec![(0, 1.0)]], vec![0.0, 2.0]).unwrap();
        let rho = policy_evaluation_average(&mdp, &[ActionId(0); 2]).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transient_states_get_no_mass() {
        // state 2 drains into the 0 <-> 1 cycle
        let mdp = FiniteMdp::new(
            3,
            1,
            vec![vec![(1, 1.0)], vec![(0, 1.0)], vec![(0, 1.0)]],
            vec![0.0, 2.0, 100.0],
        )
        .unwrap();
        let pi = stationary_distribution(&mdp, &[ActionId(0); 3]).unwrap();
        assert_eq!(pi[2], 0.0);
        assert!((pi[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bias_solves_the_poisson_equation() {
        let mdp = FiniteMdp::new(2, 1, vec![vec![(1, 1.0)], vec![(0, 0.5), (1, 0.5)]], vec![0.0, 3.0]).unwrap();
        let (g, h) = gain_and_bias(&mdp, &[ActionId(0); 2]).unwrap();
        // stationary (1/3, 2/3)
        assert!((g - 2.0).abs() < 1e-12);
        assert_eq!(h[0], 0.0);
        assert!((g + h[0] - h[1]).abs() < 1e-12);
        assert!((g + h[1] - 3.0 - 0.5 * h[0] - 0.5 * h[1]).abs() < 1e-12);
    }

    #[test]
    fn two_closed_classes_are_reported() {
        let mdp = FiniteMdp::new(3, 1, vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 0.5), (1, 0.5)]], vec![0.0; 3])
            .unwrap();
        match policy_evaluation_average(&mdp, &[ActionId(0); 3]) {
            Err(SolveError::Reducible { classes, unreachable }) => {
                assert_eq!(classes, 2);
                assert_eq!(unreachable, vec![1, 2]);
            }
            other => panic!("{other:?}"),
        }
    }
}
