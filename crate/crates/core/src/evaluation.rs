//! Exact finite-horizon policy evaluation and fairness gaps.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView3, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimatorState;
use crate::mdp::{group_pairs, TaskedGroupMDP, TimedPolicy, TimedPolicySet};
use crate::rewards::RewardVariant;

/// Value table `[step, state]` with `V[H] = 0` appended, by backward induction.
///
/// Transition rows may be sub-stochastic (e.g. unvisited cells in an
/// empirical model); missing mass simply contributes no continuation value.
pub fn state_values(
    policy: &TimedPolicy,
    transition: ArrayView4<f64>,
    reward: ArrayView3<f64>,
) -> Result<Array2<f64>> {
    let (h, s, a) = policy.dim();
    if transition.dim() != (h, s, a, s) || reward.dim() != (h, s, a) {
        return Err(Error::Dimension(format!(
            "policy {:?}, transition {:?}, reward {:?}",
            (h, s, a),
            transition.dim(),
            reward.dim()
        )));
    }
    let mut v = Array2::zeros((h + 1, s));
    for step in (0..h).rev() {
        for state in 0..s {
            let mut acc = 0.0;
            for action in 0..a {
                let p = policy.0[[step, state, action]];
                if p == 0.0 {
                    continue;
                }
                let mut q = reward[[step, state, action]];
                for next in 0..s {
                    let t = transition[[step, state, action, next]];
                    if t != 0.0 {
                        q += t * v[[step + 1, next]];
                    }
                }
                acc += p * q;
            }
            v[[step, state]] = acc;
        }
    }
    Ok(v)
}

/// `J = sum_s mu(s) V_0(s)`.
pub fn evaluate_return(
    policy: &TimedPolicy,
    initial: ArrayView1<f64>,
    transition: ArrayView4<f64>,
    reward: ArrayView3<f64>,
) -> Result<f64> {
    if initial.len() != policy.dim().1 {
        return Err(Error::Dimension(format!(
            "initial distribution has {} entries, policy has {} states",
            initial.len(),
            policy.dim().1
        )));
    }
    let v = state_values(policy, transition, reward)?;
    Ok(initial.dot(&v.row(0)))
}

/// Forward occupancy measure `[step, state, action]` of `policy`.
pub fn occupancy(
    policy: &TimedPolicy,
    initial: ArrayView1<f64>,
    transition: ArrayView4<f64>,
) -> Array3<f64> {
    let (h, s, a) = policy.dim();
    let mut d = Array3::zeros((h, s, a));
    let mut mass: Array1<f64> = initial.to_owned();
    for step in 0..h {
        let mut next_mass = Array1::zeros(s);
        for state in 0..s {
            if mass[state] == 0.0 {
                continue;
            }
            for action in 0..a {
                let x = mass[state] * policy.0[[step, state, action]];
                d[[step, state, action]] = x;
                if x == 0.0 {
                    continue;
                }
                for next in 0..s {
                    next_mass[next] += x * transition[[step, state, action, next]];
                }
            }
        }
        mass = next_mass;
    }
    d
}

/// True returns `[task, group]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnTable {
    pub values: Array2<f64>,
}

impl ReturnTable {
    pub fn get(&self, task: usize, group: usize) -> f64 {
        self.values[[task, group]]
    }

    /// Sum over groups for each task.
    pub fn task_totals(&self) -> Array1<f64> {
        self.values.sum_axis(ndarray::Axis(1))
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }
}

/// Evaluates every `(task, group)` return in the true model.
pub fn return_table(mdp: &TaskedGroupMDP, policies: &TimedPolicySet) -> Result<ReturnTable> {
    policies.check_for(&mdp.dims())?;
    let mut values = Array2::zeros((mdp.n_tasks(), mdp.n_groups()));
    for z in 0..mdp.n_groups() {
        let g = mdp.group(z);
        for m in 0..mdp.n_tasks() {
            values[[m, z]] = evaluate_return(
                policies.get(z),
                g.initial_dist.view(),
                g.transition.view(),
                mdp.task_rewards(m),
            )?;
        }
    }
    Ok(ReturnTable { values })
}

/// `|J_i - J_j|` for every task and unordered pair `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessGapReport {
    pub pairs: Vec<(usize, usize)>,
    /// `[task, pair]`.
    pub gaps: Array2<f64>,
    pub max_gap: f64,
}

impl FairnessGapReport {
    pub fn from_returns(returns: &ReturnTable) -> Self {
        let (n_tasks, n_groups) = returns.values.dim();
        let pairs = group_pairs(n_groups);
        let gaps = Array2::from_shape_fn((n_tasks, pairs.len()), |(m, p)| {
            let (i, j) = pairs[p];
            (returns.get(m, i) - returns.get(m, j)).abs()
        });
        let max_gap = gaps.iter().copied().fold(0.0, f64::max);
        FairnessGapReport {
            pairs,
            gaps,
            max_gap,
        }
    }

    /// Gap for a pair given in either order.
    pub fn gap(&self, task: usize, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let key = (i.min(j), i.max(j));
        let p = self.pairs.iter().position(|&x| x == key).expect("unknown pair");
        self.gaps[[task, p]]
    }

    pub fn task_max(&self, task: usize) -> f64 {
        self.gaps.row(task).iter().copied().fold(0.0, f64::max)
    }
}

pub fn fairness_gaps(mdp: &TaskedGroupMDP, policies: &TimedPolicySet) -> Result<FairnessGapReport> {
    Ok(FairnessGapReport::from_returns(&return_table(mdp, policies)?))
}

/// Return of one group's policy under the empirical model and a synthetic
/// reward. Unvisited cells have all-zero transition rows.
pub fn evaluate_under_estimate(
    policy: &TimedPolicy,
    group: usize,
    task: usize,
    est: &EstimatorState,
    variant: &RewardVariant,
) -> Result<f64> {
    let p_hat = est.empirical_transitions(group);
    evaluate_return(policy, est.initial_dist(group), p_hat.view(), variant.slice(task, group))
}
