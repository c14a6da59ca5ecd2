//! Ground-truth environment model, timed policies and trajectory sampling.
//!
//! Steps are 0-based throughout the crate: step `h` here is step `h + 1` in
//! the usual 1..=H notation, and the final transition out of step `H - 1`
//! lands in the terminal state that carries no reward.

use std::fmt;

use ndarray::{Array1, Array3, Array4, ArrayView1, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability vectors at construction time.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Tolerance on policy rows.
pub const POLICY_TOL: f64 = 1e-9;
/// Occupancy rows with less total mass than this extract to the uniform row.
pub const OCCUPANCY_MASS_FLOOR: f64 = 1e-12;

/// Per-group dynamics: initial distribution and step-indexed transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDynamics {
    pub group_id: usize,
    /// Distribution over states, length `n_states`.
    pub initial_dist: Array1<f64>,
    /// `[step, state, action, next_state]`.
    pub transition: Array4<f64>,
}

impl GroupDynamics {
    /// Builds dynamics whose transition table is the same at every step.
    pub fn stationary(
        group_id: usize,
        initial_dist: Array1<f64>,
        kernel: ndarray::ArrayView3<f64>,
        horizon: usize,
    ) -> Self {
        let (s, a, s2) = kernel.dim();
        let mut transition = Array4::zeros((horizon, s, a, s2));
        for mut step in transition.outer_iter_mut() {
            step.assign(&kernel);
        }
        GroupDynamics {
            group_id,
            initial_dist,
            transition,
        }
    }
}

/// Multi-task, multi-group finite-horizon MDP.
///
/// All groups share states, actions, horizon and the deterministic reward
/// tables; they differ in initial distribution and transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskedGroupMDP {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    n_tasks: usize,
    groups: Vec<GroupDynamics>,
    /// `[task, step, state, action]`, values in `[0, 1]`.
    rewards: Array4<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    InitialSum { group: usize, sum: f64 },
    InitialNegative { group: usize, state: usize, value: f64 },
    TransitionSum { group: usize, step: usize, state: usize, action: usize, sum: f64 },
    TransitionNegative { group: usize, step: usize, state: usize, action: usize, next: usize, value: f64 },
    RewardRange { task: usize, step: usize, state: usize, action: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(msg) => write!(f, "shape: {msg}"),
            Violation::InitialSum { group, sum } => {
                write!(f, "initial_dist of group {group} sums to {sum}")
            }
            Violation::InitialNegative { group, state, value } => {
                write!(f, "initial_dist of group {group} has {value} at state {state}")
            }
            Violation::TransitionSum { group, step, state, action, sum } => write!(
                f,
                "transition row (group={group}, step={step}, state={state}, action={action}) sums to {sum}"
            ),
            Violation::TransitionNegative { group, step, state, action, next, value } => write!(
                f,
                "transition (group={group}, step={step}, state={state}, action={action}) -> {next} is {value}"
            ),
            Violation::RewardRange { task, step, state, action, value } => write!(
                f,
                "reward (task={task}, step={step}, state={state}, action={action}) = {value} outside [0, 1]"
            ),
        }
    }
}

impl TaskedGroupMDP {
    /// Builds and validates a model. Probability rows are never renormalized:
    /// any row off the simplex by more than [`SIMPLEX_TOL`] is an error.
    pub fn new(groups: Vec<GroupDynamics>, rewards: Array4<f64>) -> Result<Self> {
        let mdp = Self::from_parts(groups, rewards)?;
        let report = mdp.validate();
        if report.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::InvalidModel(report))
        }
    }

    /// Builds a model without simplex/range checks; shapes are still checked.
    /// Use [`TaskedGroupMDP::validate`] to obtain the violation report.
    pub fn from_parts(groups: Vec<GroupDynamics>, rewards: Array4<f64>) -> Result<Self> {
        let (n_tasks, horizon, n_states, n_actions) = rewards.dim();
        if n_tasks == 0 || horizon == 0 || n_states == 0 || n_actions == 0 {
            return Err(Error::Config(format!(
                "all dimensions must be positive (tasks={n_tasks}, horizon={horizon}, states={n_states}, actions={n_actions})"
            )));
        }
        if groups.is_empty() {
            return Err(Error::Config("at least one group is required".into()));
        }
        for (z, g) in groups.iter().enumerate() {
            if g.initial_dist.len() != n_states {
                return Err(Error::Dimension(format!(
                    "group {z}: initial_dist has {} entries, expected {n_states}",
                    g.initial_dist.len()
                )));
            }
            if g.transition.dim() != (horizon, n_states, n_actions, n_states) {
                return Err(Error::Dimension(format!(
                    "group {z}: transition shape {:?}, expected {:?}",
                    g.transition.dim(),
                    (horizon, n_states, n_actions, n_states)
                )));
            }
        }
        Ok(TaskedGroupMDP {
            n_states,
            n_actions,
            horizon,
            n_tasks,
            groups,
            rewards,
        })
    }

    /// Lists every simplex or range violation; empty when the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (z, g) in self.groups.iter().enumerate() {
            if g.group_id != z {
                out.push(Violation::Shape(format!(
                    "group at position {z} has group_id {}",
                    g.group_id
                )));
            }
            for (s, &p) in g.initial_dist.iter().enumerate() {
                if !(p >= 0.0) {
                    out.push(Violation::InitialNegative { group: z, state: s, value: p });
                }
            }
            let sum = g.initial_dist.sum();
            if !((sum - 1.0).abs() <= SIMPLEX_TOL) {
                out.push(Violation::InitialSum { group: z, sum });
            }
            for ((h, s, a), row) in rows4(&g.transition) {
                for (next, &p) in row.iter().enumerate() {
                    if !(p >= 0.0) {
                        out.push(Violation::TransitionNegative {
                            group: z,
                            step: h,
                            state: s,
                            action: a,
                            next,
                            value: p,
                        });
                    }
                }
                let sum = row.sum();
                if !((sum - 1.0).abs() <= SIMPLEX_TOL) {
                    out.push(Violation::TransitionSum {
                        group: z,
                        step: h,
                        state: s,
                        action: a,
                        sum,
                    });
                }
            }
        }
        for ((m, h, s, a), &r) in self.rewards.indexed_iter() {
            if !(0.0..=1.0).contains(&r) {
                out.push(Violation::RewardRange {
                    task: m,
                    step: h,
                    state: s,
                    action: a,
                    value: r,
                });
            }
        }
        out
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }
    pub fn groups(&self) -> &[GroupDynamics] {
        &self.groups
    }
    pub fn group(&self, z: usize) -> &GroupDynamics {
        &self.groups[z]
    }
    /// `[task, step, state, action]`.
    pub fn rewards(&self) -> &Array4<f64> {
        &self.rewards
    }
    /// `[step, state, action]` slice for one task.
    pub fn task_rewards(&self, task: usize) -> ArrayView3<'_, f64> {
        self.rewards.index_axis(Axis(0), task)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n_groups: self.groups.len(),
            n_states: self.n_states,
            n_actions: self.n_actions,
            horizon: self.horizon,
            n_tasks: self.n_tasks,
        }
    }
}

/// Problem sizes shared by the learner's data structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_groups: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub n_tasks: usize,
}

impl Dims {
    /// Unordered group pairs `(i, j)` with `i < j`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        group_pairs(self.n_groups)
    }
}

pub fn group_pairs(n_groups: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n_groups {
        for j in i + 1..n_groups {
            out.push((i, j));
        }
    }
    out
}

fn rows4(t: &Array4<f64>) -> impl Iterator<Item = ((usize, usize, usize), ArrayView1<'_, f64>)> {
    let (hh, ss, aa, _) = t.dim();
    (0..hh).flat_map(move |h| {
        (0..ss).flat_map(move |s| {
            (0..aa).map(move |a| ((h, s, a), t.slice(ndarray::s![h, s, a, ..])))
        })
    })
}

/// Time-indexed stochastic policy for a single group, `[step, state, action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedPolicy(pub Array3<f64>);

impl TimedPolicy {
    pub fn uniform(horizon: usize, n_states: usize, n_actions: usize) -> Self {
        TimedPolicy(Array3::from_elem(
            (horizon, n_states, n_actions),
            1.0 / n_actions as f64,
        ))
    }

    /// Always plays `action`.
    pub fn constant(horizon: usize, n_states: usize, n_actions: usize, action: usize) -> Self {
        let mut t = Array3::zeros((horizon, n_states, n_actions));
        t.slice_mut(ndarray::s![.., .., action]).fill(1.0);
        TimedPolicy(t)
    }

    /// Deterministic policy from an action table `[step][state]`.
    pub fn deterministic(actions: &[Vec<usize>], n_actions: usize) -> Self {
        let horizon = actions.len();
        let n_states = actions.first().map_or(0, |r| r.len());
        let mut t = Array3::zeros((horizon, n_states, n_actions));
        for (h, row) in actions.iter().enumerate() {
            for (s, &a) in row.iter().enumerate() {
                t[[h, s, a]] = 1.0;
            }
        }
        TimedPolicy(t)
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.0.dim()
    }

    pub fn prob(&self, step: usize, state: usize, action: usize) -> f64 {
        self.0[[step, state, action]]
    }

    pub fn is_valid(&self) -> bool {
        self.0.lanes(Axis(2)).into_iter().all(|row| {
            row.iter().all(|&p| p >= 0.0) && (row.sum() - 1.0).abs() <= POLICY_TOL
        })
    }
}

/// One timed policy per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedPolicySet {
    pub policies: Vec<TimedPolicy>,
}

impl TimedPolicySet {
    pub fn new(policies: Vec<TimedPolicy>) -> Self {
        TimedPolicySet { policies }
    }

    /// The same policy for every group.
    pub fn shared(policy: TimedPolicy, n_groups: usize) -> Self {
        TimedPolicySet {
            policies: vec![policy; n_groups],
        }
    }

    pub fn get(&self, group: usize) -> &TimedPolicy {
        &self.policies[group]
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        self.policies.iter().all(TimedPolicy::is_valid)
    }

    /// Checks the set against model dimensions and simplex rows.
    pub fn check_for(&self, dims: &Dims) -> Result<()> {
        if self.policies.len() != dims.n_groups {
            return Err(Error::Dimension(format!(
                "policy set has {} groups, model has {}",
                self.policies.len(),
                dims.n_groups
            )));
        }
        for (z, p) in self.policies.iter().enumerate() {
            if p.dim() != (dims.horizon, dims.n_states, dims.n_actions) {
                return Err(Error::Dimension(format!(
                    "policy for group {z} has shape {:?}, expected {:?}",
                    p.dim(),
                    (dims.horizon, dims.n_states, dims.n_actions)
                )));
            }
            if !p.is_valid() {
                return Err(Error::Config(format!(
                    "policy for group {z} has a row off the probability simplex"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    pub state: usize,
    pub action: usize,
    /// Reward of every task at `(step, state, action)`.
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub group: usize,
    /// Exactly `horizon` steps, in order.
    pub steps: Vec<TrajectoryStep>,
    /// State reached after the last action.
    pub final_state: usize,
}

impl Trajectory {
    /// Next state after step `i`.
    pub fn next_state(&self, i: usize) -> usize {
        self.steps.get(i + 1).map_or(self.final_state, |s| s.state)
    }
}

/// Inverse-CDF draw. Rounding slack at the tail goes to the last index
/// with positive mass.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: ArrayView1<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Rolls out one episode of `policy` for `group` in the true model.
pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &TaskedGroupMDP,
    group: usize,
    policy: &TimedPolicySet,
    rng: &mut R,
) -> Result<Trajectory> {
    if group >= mdp.n_groups() {
        return Err(Error::Dimension(format!(
            "group {group} out of range ({} groups)",
            mdp.n_groups()
        )));
    }
    if policy.len() != mdp.n_groups() {
        return Err(Error::Dimension(format!(
            "policy set has {} groups, model has {}",
            policy.len(),
            mdp.n_groups()
        )));
    }
    let pi = policy.get(group);
    if pi.dim() != (mdp.horizon(), mdp.n_states(), mdp.n_actions()) {
        return Err(Error::Dimension(format!(
            "policy shape {:?} does not match model {:?}",
            pi.dim(),
            (mdp.horizon(), mdp.n_states(), mdp.n_actions())
        )));
    }
    let dyn_ = mdp.group(group);
    let mut state = sample_index(dyn_.initial_dist.view(), rng);
    let mut steps = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let action = sample_index(pi.0.slice(ndarray::s![h, state, ..]), rng);
        let rewards = (0..mdp.n_tasks())
            .map(|m| mdp.rewards[[m, h, state, action]])
            .collect();
        steps.push(TrajectoryStep {
            step: h,
            state,
            action,
            rewards,
        });
        state = sample_index(dyn_.transition.slice(ndarray::s![h, state, action, ..]), rng);
    }
    Ok(Trajectory {
        group,
        steps,
        final_state: state,
    })
}

/// Converts one group's occupancy measure `[step, state, action]` into the
/// policy that induces it. Entries slightly below zero are clamped; rows
/// with (near) zero mass become uniform.
pub fn policy_from_occupancy(occupancy: ArrayView3<f64>) -> TimedPolicy {
    let (hh, ss, aa) = occupancy.dim();
    let mut out = Array3::zeros((hh, ss, aa));
    for h in 0..hh {
        for s in 0..ss {
            let row = occupancy.slice(ndarray::s![h, s, ..]);
            let total: f64 = row.iter().map(|&d| d.max(0.0)).sum();
            for a in 0..aa {
                out[[h, s, a]] = if total < OCCUPANCY_MASS_FLOOR {
                    1.0 / aa as f64
                } else {
                    row[a].max(0.0) / total
                };
            }
        }
    }
    TimedPolicy(out)
}
