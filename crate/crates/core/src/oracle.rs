//! The regret comparator: the fair optimum of the true model, found with
//! the same occupancy program as the planner but with true transitions,
//! true rewards and no confidence terms.

use ndarray::Array5;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{return_table, FairnessGapReport, ReturnTable};
use crate::mdp::{TaskedGroupMDP, TimedPolicySet};
use crate::planner::{build_occupancy_lp, solve_lp, OccupancyProblem, SolveStatus, FEASIBILITY_TOL};
use crate::simplex::{DenseSimplex, LpBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretOracle {
    pub epsilon: f64,
    /// True returns of the optimal fair policy list, `[task, group]`.
    pub returns: ReturnTable,
    /// Per task, the group-summed return of the optimum.
    pub task_values: Vec<f64>,
    /// Sum over tasks and groups.
    pub objective: f64,
    pub max_gap: f64,
    pub policies: TimedPolicySet,
}

impl RegretOracle {
    /// Per-task regret increment of one episode with the given true returns.
    pub fn increments(&self, returns: &ReturnTable) -> Vec<f64> {
        let totals = returns.task_totals();
        self.task_values.iter().zip(totals.iter()).map(|(o, r)| o - r).collect()
    }
}

/// True reward table broadcast to `[task, group, step, state, action]`.
fn true_reward_table(mdp: &TaskedGroupMDP) -> Array5<f64> {
    let r = mdp.rewards();
    let (m, h, s, a) = r.dim();
    Array5::from_shape_fn((m, mdp.n_groups(), h, s, a), |(mm, _, hh, ss, aa)| r[[mm, hh, ss, aa]])
}

pub fn compute_fair_optimum(mdp: &TaskedGroupMDP, epsilon: f64) -> Result<RegretOracle> {
    compute_fair_optimum_with(mdp, epsilon, &DenseSimplex::default())
}

pub fn compute_fair_optimum_with(mdp: &TaskedGroupMDP, epsilon: f64, backend: &dyn LpBackend) -> Result<RegretOracle> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let dims = mdp.dims();
    let initial: Vec<_> = mdp.groups().iter().map(|g| g.initial_dist.clone()).collect();
    let transitions: Vec<_> = mdp.groups().iter().map(|g| g.transition.clone()).collect();
    let r = true_reward_table(mdp);
    let tasks: Vec<usize> = (0..dims.n_tasks).collect();
    let problem = OccupancyProblem {
        initial: &initial,
        transitions: &transitions,
        upper: &r,
        lower: &r,
        objective: &r,
        epsilon,
        constrained_tasks: &tasks,
        objective_tasks: &tasks,
    };
    let lp = build_occupancy_lp(dims, &problem);
    let sol = solve_lp(&lp, backend)?;
    if sol.status != SolveStatus::Optimal {
        return Err(Error::OracleInfeasible(epsilon));
    }
    let policies = sol.policies();
    let returns = return_table(mdp, &policies)?;
    let gaps = FairnessGapReport::from_returns(&returns);
    if gaps.max_gap > epsilon + FEASIBILITY_TOL {
        log::warn!("fair optimum has true gap {} above epsilon {epsilon}", gaps.max_gap);
    }
    Ok(RegretOracle {
        epsilon,
        task_values: returns.task_totals().to_vec(),
        objective: returns.total(),
        max_gap: gaps.max_gap,
        returns,
        policies,
    })
}

/// Cumulative regret series derived from per-episode true returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    /// `per_task[m][k]` is the cumulative regret of task `m` after episode `k`.
    pub per_task: Vec<Vec<f64>>,
    /// Sum over tasks.
    pub summed: Vec<f64>,
}

impl RegretCurve {
    pub fn final_summed(&self) -> f64 {
        self.summed.last().copied().unwrap_or(0.0)
    }
}

/// `Reg(k; r_m) = sum_{j <= k} [J(pi*; r_m) - J(pi^j; r_m)]`, each return
/// summed over groups. Per-task series may dip; the summed series is what
/// the planner optimizes.
pub fn regret_curve<'a>(returns: impl IntoIterator<Item = &'a ReturnTable>, oracle: &RegretOracle) -> RegretCurve {
    let n_tasks = oracle.task_values.len();
    let mut per_task = vec![Vec::new(); n_tasks];
    let mut summed = Vec::new();
    let mut acc = vec![0.0; n_tasks];
    for r in returns {
        let inc = oracle.increments(r);
        for m in 0..n_tasks {
            acc[m] += inc[m];
            per_task[m].push(acc[m]);
        }
        summed.push(acc.iter().sum());
    }
    RegretCurve { per_task, summed }
}
