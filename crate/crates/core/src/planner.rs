//! Per-episode planning: the conservative fallback test and the joint
//! occupancy-measure linear program over all groups.
//!
//! Variables are `d_z(h, s, a) >= 0`, laid out group-major then step, state,
//! action. Each group contributes one flow row per `(h, s)`:
//!
//! ```text
//! sum_a d_z(0, s, a) = mu_z(s)
//! sum_a d_z(h, s, a) - sum_{s', a'} P_z,h-1(s | s', a') d_z(h-1, s', a') = 0
//! ```
//!
//! and groups are coupled only through the fairness rows, one per task and
//! ordered pair `(i, j)`, `i != j`:
//!
//! ```text
//! sum d_i * r_upper[m, i] - sum d_j * r_lower[m, j] <= epsilon
//! ```

use std::fmt;

use ndarray::{Array1, Array3, Array4, Array5, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimatorState;
use crate::evaluation::evaluate_return;
use crate::mdp::{policy_from_occupancy, Dims, TimedPolicy, TimedPolicySet, OCCUPANCY_MASS_FLOOR};
use crate::rewards::{reward_set, AlphaVariant, RewardSet};
use crate::simplex::{LinearProgram, LpBackend, LpError, LpStatus, Sense};

/// Absolute feasibility tolerance for returned solutions.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// The initial safe policy was played.
    Fallback,
    /// The policy came from the occupancy program.
    Lp,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Fallback => "fallback",
            Mode::Lp => "lp",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fallback" => Ok(Mode::Fallback),
            "lp" => Ok(Mode::Lp),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Inputs of one occupancy program. Reward tables are `[task, group, step, state, action]`.
#[derive(Debug, Clone, Copy)]
pub struct OccupancyProblem<'a> {
    pub initial: &'a [Array1<f64>],
    pub transitions: &'a [Array4<f64>],
    /// Reward evaluated on the advantaged side of each fairness row.
    pub upper: &'a Array5<f64>,
    /// Reward evaluated on the disadvantaged side.
    pub lower: &'a Array5<f64>,
    pub objective: &'a Array5<f64>,
    pub epsilon: f64,
    pub constrained_tasks: &'a [usize],
    pub objective_tasks: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub task: usize,
    /// Group whose return is taken with the upper reward.
    pub upper_group: usize,
    pub lower_group: usize,
    pub row: usize,
}

/// The assembled program plus the bookkeeping to read solutions back.
#[derive(Debug, Clone)]
pub struct OccupancyLP {
    pub dims: Dims,
    pub lp: LinearProgram,
    pub n_flow_rows: usize,
    pub fairness_rows: Vec<FairnessRow>,
    /// Greedy deterministic crash basis for the flow rows.
    pub crash_basis: Vec<Option<usize>>,
}

impl OccupancyLP {
    pub fn var(&self, group: usize, step: usize, state: usize, action: usize) -> usize {
        var_index(&self.dims, group, step, state, action)
    }

    pub fn n_vars(&self) -> usize {
        self.lp.n_vars()
    }

    /// Splits a primal vector into per-group occupancy tables.
    pub fn occupancies(&self, x: &[f64]) -> Vec<Array3<f64>> {
        let d = &self.dims;
        let block = d.horizon * d.n_states * d.n_actions;
        (0..d.n_groups)
            .map(|z| {
                Array3::from_shape_vec(
                    (d.horizon, d.n_states, d.n_actions),
                    x[z * block..(z + 1) * block].to_vec(),
                )
                .expect("block shape")
            })
            .collect()
    }
}

fn var_index(d: &Dims, group: usize, step: usize, state: usize, action: usize) -> usize {
    ((group * d.horizon + step) * d.n_states + state) * d.n_actions + action
}

/// Deterministic greedy policy for `reward` under `transition`; ties go to
/// the lowest action index.
pub fn greedy_actions(transition: &Array4<f64>, reward: ArrayView3<f64>) -> Vec<Vec<usize>> {
    let (h, s, a, _) = transition.dim();
    let mut v = vec![0.0; s];
    let mut actions = vec![vec![0; s]; h];
    for step in (0..h).rev() {
        let mut nv = vec![0.0; s];
        for state in 0..s {
            let mut best = f64::NEG_INFINITY;
            for action in 0..a {
                let mut q = reward[[step, state, action]];
                for next in 0..s {
                    q += transition[[step, state, action, next]] * v[next];
                }
                if q > best {
                    best = q;
                    actions[step][state] = action;
                }
            }
            nv[state] = best;
        }
        v = nv;
    }
    actions
}

/// Assembles the joint occupancy program.
pub fn build_occupancy_lp(dims: Dims, problem: &OccupancyProblem<'_>) -> OccupancyLP {
    let Dims {
        n_groups: nz,
        n_states: ns,
        n_actions: na,
        horizon: nh,
        ..
    } = dims;
    let n_vars = nz * nh * ns * na;
    let mut lp = LinearProgram::new(n_vars);
    let mut crash = Vec::with_capacity(nz * nh * ns);

    for z in 0..nz {
        let p = &problem.transitions[z];
        let mut summed = Array3::<f64>::zeros((nh, ns, na));
        for &m in problem.objective_tasks {
            summed += &problem.objective.slice(ndarray::s![m, z, .., .., ..]);
            for h in 0..nh {
                for s in 0..ns {
                    for a in 0..na {
                        lp.add_to_objective(var_index(&dims, z, h, s, a), problem.objective[[m, z, h, s, a]]);
                    }
                }
            }
        }
        let greedy = greedy_actions(p, summed.view());
        for h in 0..nh {
            for s in 0..ns {
                let mut coeffs: Vec<(usize, f64)> = (0..na).map(|a| (var_index(&dims, z, h, s, a), 1.0)).collect();
                let rhs = if h == 0 {
                    problem.initial[z][s]
                } else {
                    for sp in 0..ns {
                        for ap in 0..na {
                            let t = p[[h - 1, sp, ap, s]];
                            if t != 0.0 {
                                coeffs.push((var_index(&dims, z, h - 1, sp, ap), -t));
                            }
                        }
                    }
                    0.0
                };
                lp.add_constraint(coeffs, Sense::Eq, rhs);
                crash.push(Some(var_index(&dims, z, h, s, greedy[h][s])));
            }
        }
    }
    let n_flow_rows = lp.constraints().len();

    let mut fairness_rows = Vec::new();
    for &m in problem.constrained_tasks {
        for i in 0..nz {
            for j in 0..nz {
                if i == j {
                    continue;
                }
                let mut coeffs = Vec::with_capacity(2 * nh * ns * na);
                for h in 0..nh {
                    for s in 0..ns {
                        for a in 0..na {
                            let u = problem.upper[[m, i, h, s, a]];
                            if u != 0.0 {
                                coeffs.push((var_index(&dims, i, h, s, a), u));
                            }
                            let l = problem.lower[[m, j, h, s, a]];
                            if l != 0.0 {
                                coeffs.push((var_index(&dims, j, h, s, a), -l));
                            }
                        }
                    }
                }
                let row = lp.add_constraint(coeffs, Sense::Le, problem.epsilon);
                fairness_rows.push(FairnessRow {
                    task: m,
                    upper_group: i,
                    lower_group: j,
                    row,
                });
                crash.push(None);
            }
        }
    }

    OccupancyLP {
        dims,
        lp,
        n_flow_rows,
        fairness_rows,
        crash_basis: crash,
    }
}

/// Occupancy program of one episode, built from the estimator's empirical
/// transitions and the synthetic reward tables.
pub fn build_lp(
    est: &EstimatorState,
    rewards: &RewardSet,
    epsilon: f64,
    constrained_tasks: &[usize],
    objective_tasks: &[usize],
) -> Result<OccupancyLP> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let dims = *est.dims();
    let transitions: Vec<Array4<f64>> = (0..dims.n_groups).map(|z| est.empirical_transitions(z)).collect();
    let problem = OccupancyProblem {
        initial: est.initial_dists(),
        transitions: &transitions,
        upper: &rewards.optimistic.table,
        lower: &rewards.pessimistic.table,
        objective: &rewards.exploration.table,
        epsilon,
        constrained_tasks,
        objective_tasks,
    };
    Ok(build_occupancy_lp(dims, &problem))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    UnboundedGuard,
}

#[derive(Debug, Clone)]
pub struct LPSolution {
    pub status: SolveStatus,
    /// Per-group `[step, state, action]` occupancy.
    pub occupancies: Vec<Array3<f64>>,
    pub objective_value: f64,
    /// Largest row/bound violation of the returned point.
    pub max_violation: f64,
    pub iterations: usize,
}

impl LPSolution {
    pub fn policies(&self) -> TimedPolicySet {
        TimedPolicySet::new(self.occupancies.iter().map(|d| policy_from_occupancy(d.view())).collect())
    }

    /// Like [`LPSolution::policies`], but rows the program leaves without
    /// occupancy copy the corresponding row of `fill`.
    pub fn policies_filled(&self, fill: &TimedPolicySet) -> TimedPolicySet {
        let mut set = self.policies();
        for (z, d) in self.occupancies.iter().enumerate() {
            let (hh, ss, _) = d.dim();
            for h in 0..hh {
                for s in 0..ss {
                    let mass: f64 = d.slice(ndarray::s![h, s, ..]).iter().map(|&x| x.max(0.0)).sum();
                    if mass < OCCUPANCY_MASS_FLOOR {
                        set.policies[z]
                            .0
                            .slice_mut(ndarray::s![h, s, ..])
                            .assign(&fill.get(z).0.slice(ndarray::s![h, s, ..]));
                    }
                }
            }
        }
        set
    }
}

/// How rows outside the program's support are filled when extracting policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UnreachedRows {
    /// Uniform over actions, as occupancy extraction does.
    #[default]
    Uniform,
    /// Copy the safe policy's row.
    SafePolicy,
}

/// Solves the program starting from its greedy crash basis.
pub fn solve_lp(lp: &OccupancyLP, backend: &dyn LpBackend) -> std::result::Result<LPSolution, LpError> {
    let sol = backend.solve(&lp.lp, Some(&lp.crash_basis))?;
    let status = match sol.status {
        LpStatus::Optimal => SolveStatus::Optimal,
        LpStatus::Infeasible => SolveStatus::Infeasible,
        LpStatus::Unbounded => SolveStatus::UnboundedGuard,
    };
    let max_violation = if status == SolveStatus::Optimal {
        lp.lp.max_violation(&sol.x)
    } else {
        f64::NAN
    };
    Ok(LPSolution {
        status,
        occupancies: lp.occupancies(&sol.x),
        objective_value: sol.objective,
        max_violation,
        iterations: sol.iterations,
    })
}

/// Returns of `policies` under the empirical model for each `(task, group)`,
/// for the upper and lower reward tables.
fn sandwich_returns(
    est: &EstimatorState,
    policies: &TimedPolicySet,
    rewards: &RewardSet,
    tasks: &[usize],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let nz = est.dims().n_groups;
    let mut upper = vec![vec![0.0; nz]; tasks.len()];
    let mut lower = vec![vec![0.0; nz]; tasks.len()];
    for z in 0..nz {
        let p_hat = est.empirical_transitions(z);
        let mu = est.initial_dist(z);
        for (k, &m) in tasks.iter().enumerate() {
            upper[k][z] = evaluate_return(policies.get(z), mu, p_hat.view(), rewards.optimistic.slice(m, z))?;
            lower[k][z] = evaluate_return(policies.get(z), mu, p_hat.view(), rewards.pessimistic.slice(m, z))?;
        }
    }
    Ok((upper, lower))
}

/// True when the safe policy must be played: some task and ordered pair
/// has an optimistic gap above `(epsilon + epsilon0) / 2`.
pub fn fallback_check(
    est: &EstimatorState,
    pi0: &TimedPolicySet,
    rewards: &RewardSet,
    epsilon: f64,
    epsilon0: f64,
    tasks: &[usize],
) -> Result<bool> {
    pi0.check_for(est.dims())?;
    let threshold = (epsilon + epsilon0) / 2.0;
    let (upper, lower) = sandwich_returns(est, pi0, rewards, tasks)?;
    let nz = est.dims().n_groups;
    for k in 0..tasks.len() {
        for i in 0..nz {
            for j in 0..nz {
                if i != j && upper[k][i] - lower[k][j] > threshold {
                    return Ok(true);
                }
            }
        }
    }
    Ok(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub epsilon: f64,
    pub epsilon0: f64,
    pub alpha: AlphaVariant,
    /// Tasks whose fairness is enforced (fallback test and LP rows).
    pub constrained_tasks: Vec<usize>,
    /// Tasks whose exploration reward is maximized.
    pub objective_tasks: Vec<usize>,
    #[serde(default)]
    pub unreached: UnreachedRows,
}

impl PlannerConfig {
    pub fn all_tasks(epsilon: f64, epsilon0: f64, n_tasks: usize) -> Self {
        PlannerConfig {
            epsilon,
            epsilon0,
            alpha: AlphaVariant::Standard,
            constrained_tasks: (0..n_tasks).collect(),
            objective_tasks: (0..n_tasks).collect(),
            unreached: UnreachedRows::Uniform,
        }
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.epsilon0 >= 0.0 && self.epsilon0 < self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon0 must lie in [0, epsilon), got {} with epsilon {}",
                self.epsilon0, self.epsilon
            )));
        }
        if self.objective_tasks.is_empty() {
            return Err(Error::Config("at least one objective task is required".into()));
        }
        if self
            .constrained_tasks
            .iter()
            .chain(&self.objective_tasks)
            .any(|&m| m >= dims.n_tasks)
        {
            return Err(Error::Config(format!("task index out of range (M = {})", dims.n_tasks)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub policies: TimedPolicySet,
    pub mode: Mode,
    /// LP objective when the program was solved.
    pub lp_objective: Option<f64>,
    /// The program reported infeasible although the fallback test passed.
    pub anomaly: bool,
    /// The program that was solved, if any.
    pub lp: Option<OccupancyLP>,
}

/// One planning step: fallback test, then the occupancy program.
pub fn plan_episode(
    est: &EstimatorState,
    pi0: &TimedPolicySet,
    cfg: &PlannerConfig,
    backend: &dyn LpBackend,
) -> Result<Plan> {
    let rewards = reward_set(est, cfg.epsilon, cfg.epsilon0, cfg.alpha)?;
    if fallback_check(est, pi0, &rewards, cfg.epsilon, cfg.epsilon0, &cfg.constrained_tasks)? {
        return Ok(Plan {
            policies: pi0.clone(),
            mode: Mode::Fallback,
            lp_objective: None,
            anomaly: false,
            lp: None,
        });
    }
    let lp = build_lp(est, &rewards, cfg.epsilon, &cfg.constrained_tasks, &cfg.objective_tasks)?;
    let sol = solve_lp(&lp, backend)?;
    match sol.status {
        SolveStatus::Optimal => Ok(Plan {
            policies: match cfg.unreached {
                UnreachedRows::SafePolicy => sol.policies_filled(pi0),
                UnreachedRows::Uniform => sol.policies(),
            },
            mode: Mode::Lp,
            lp_objective: Some(sol.objective_value),
            anomaly: false,
            lp: Some(lp),
        }),
        status => {
            log::warn!("occupancy program returned {status:?} although the fallback test passed; playing the safe policy");
            Ok(Plan {
                policies: pi0.clone(),
                mode: Mode::Fallback,
                lp_objective: None,
                anomaly: true,
                lp: Some(lp),
            })
        }
    }
}

/// Greedy deterministic policy set for the summed objective of `tasks`
/// under each group's transitions.
pub fn greedy_policy_set(transitions: &[Array4<f64>], objective: &Array5<f64>, tasks: &[usize]) -> TimedPolicySet {
    let policies = transitions
        .iter()
        .enumerate()
        .map(|(z, p)| {
            let (h, s, a, _) = p.dim();
            let mut summed = Array3::<f64>::zeros((h, s, a));
            for &m in tasks {
                summed += &objective.slice(ndarray::s![m, z, .., .., ..]);
            }
            TimedPolicy::deterministic(&greedy_actions(p, summed.view()), a)
        })
        .collect();
    TimedPolicySet::new(policies)
}
