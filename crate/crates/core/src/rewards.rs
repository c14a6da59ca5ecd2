//! Synthetic reward tables built from the estimator: optimistic and
//! pessimistic rewards for the fairness sandwich, and the
//! exploration-augmented reward maximized by the planner.
//!
//! None of these are clipped to `[0, 1]`; the return-sandwich bounds need the
//! raw shifted values.

use ndarray::{Array4, Array5, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimatorState;
use crate::mdp::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardKind {
    Optimistic,
    Pessimistic,
    Exploration,
}

/// Which exploration coefficient to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AlphaVariant {
    /// `|S|H + 8|S|H^2 / (eps - eps0)`.
    #[default]
    Standard,
    /// `|S|H + 8 M^2 |S|H^2 / (eps - eps0)`.
    TaskScaled,
}

/// A reward table `[task, group, step, state, action]`. The radius is
/// shared across tasks, so every task slice is `r_hat[task] + coef * beta[group]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVariant {
    pub kind: RewardKind,
    /// Signed multiplier applied to the radius.
    pub coefficient: f64,
    pub table: Array5<f64>,
}

impl RewardVariant {
    /// `[step, state, action]` slice for one task and group.
    pub fn slice(&self, task: usize, group: usize) -> ArrayView3<'_, f64> {
        self.table.slice(ndarray::s![task, group, .., .., ..])
    }
}

/// All three variants for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSet {
    pub optimistic: RewardVariant,
    pub pessimistic: RewardVariant,
    pub exploration: RewardVariant,
}

/// `r_hat[m] + coefficient * radii[z]` for every task and group.
///
/// `r_hat` is `[task, step, state, action]`, `radii` is `[group, step, state, action]`.
pub fn shifted_reward(kind: RewardKind, r_hat: &Array4<f64>, radii: &Array4<f64>, coefficient: f64) -> RewardVariant {
    let (m, h, s, a) = r_hat.dim();
    let z = radii.dim().0;
    assert_eq!(radii.dim(), (z, h, s, a), "radius table shape mismatch");
    let table = Array5::from_shape_fn((m, z, h, s, a), |(mm, zz, hh, ss, aa)| {
        r_hat[[mm, hh, ss, aa]] + coefficient * radii[[zz, hh, ss, aa]]
    });
    RewardVariant {
        kind,
        coefficient,
        table,
    }
}

fn sandwich_coefficient(dims: &Dims) -> f64 {
    (dims.n_states * dims.horizon) as f64
}

/// `r_bar = r_hat + |S| H beta`.
pub fn optimistic_reward(est: &EstimatorState) -> RewardVariant {
    let c = sandwich_coefficient(est.dims());
    shifted_reward(RewardKind::Optimistic, est.reward_estimate(), &est.radii(), c)
}

/// `r_under = r_hat - |S| H beta`; may go negative.
pub fn pessimistic_reward(est: &EstimatorState) -> RewardVariant {
    let c = sandwich_coefficient(est.dims());
    shifted_reward(RewardKind::Pessimistic, est.reward_estimate(), &est.radii(), -c)
}

/// Exploration bonus coefficient alpha.
pub fn exploration_coefficient(dims: &Dims, epsilon: f64, epsilon0: f64, variant: AlphaVariant) -> Result<f64> {
    let margin = epsilon - epsilon0;
    if !(margin > 0.0) {
        return Err(Error::Config(format!(
            "epsilon ({epsilon}) must exceed epsilon0 ({epsilon0})"
        )));
    }
    let sh = (dims.n_states * dims.horizon) as f64;
    let h = dims.horizon as f64;
    let task_factor = match variant {
        AlphaVariant::Standard => 1.0,
        AlphaVariant::TaskScaled => (dims.n_tasks * dims.n_tasks) as f64,
    };
    Ok(sh + 8.0 * task_factor * sh * h / margin)
}

/// `r_opt = r_hat + alpha beta`.
pub fn exploration_reward(
    est: &EstimatorState,
    epsilon: f64,
    epsilon0: f64,
    variant: AlphaVariant,
) -> Result<RewardVariant> {
    let alpha = exploration_coefficient(est.dims(), epsilon, epsilon0, variant)?;
    Ok(shifted_reward(RewardKind::Exploration, est.reward_estimate(), &est.radii(), alpha))
}

/// Computes all three variants from one radius table.
pub fn reward_set(est: &EstimatorState, epsilon: f64, epsilon0: f64, variant: AlphaVariant) -> Result<RewardSet> {
    let alpha = exploration_coefficient(est.dims(), epsilon, epsilon0, variant)?;
    let c = sandwich_coefficient(est.dims());
    let radii = est.radii();
    let r_hat = est.reward_estimate();
    Ok(RewardSet {
        optimistic: shifted_reward(RewardKind::Optimistic, r_hat, &radii, c),
        pessimistic: shifted_reward(RewardKind::Pessimistic, r_hat, &radii, -c),
        exploration: shifted_reward(RewardKind::Exploration, r_hat, &radii, alpha),
    })
}
