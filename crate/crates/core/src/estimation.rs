//! Visit counters, empirical transitions, observed rewards and confidence
//! radii. This is everything the learner knows about the unknown model.

use ndarray::{Array1, Array3, Array4, Array5, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Dims, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    /// Failure probability, in (0, 1).
    pub delta: f64,
    /// Planned number of episodes.
    pub n_episodes: usize,
    /// Multiplier applied to every radius. `1.0` is the plain Hoeffding
    /// radius; smaller values trade the high-probability guarantee for
    /// faster learning at desk-scale episode budgets.
    pub radius_scale: f64,
}

impl ConfidenceConfig {
    pub fn new(delta: f64, n_episodes: usize) -> Self {
        ConfidenceConfig {
            delta,
            n_episodes,
            radius_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if self.n_episodes == 0 {
            return Err(Error::Config("number of episodes must be positive".into()));
        }
        if !(self.radius_scale > 0.0 && self.radius_scale.is_finite()) {
            return Err(Error::Config(format!(
                "radius_scale must be positive, got {}",
                self.radius_scale
            )));
        }
        Ok(())
    }
}

/// `C = ln(2 |Z| |S|^2 |A| H K / delta)`.
pub fn confidence_constant(cfg: &ConfidenceConfig, dims: &Dims) -> f64 {
    let s = dims.n_states as f64;
    let arg = 2.0
        * dims.n_groups as f64
        * s
        * s
        * dims.n_actions as f64
        * dims.horizon as f64
        * cfg.n_episodes as f64
        / cfg.delta;
    arg.ln()
}

/// Radius for a cell visited `count` times.
pub fn radius_for_count(constant: f64, count: u64) -> f64 {
    (constant / count.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    dims: Dims,
    /// Known initial distribution of each group.
    initial_dists: Vec<Array1<f64>>,
    /// `[group, step, state, action]`.
    counts: Array4<u64>,
    /// `[group, step, state, action, next_state]`.
    next_counts: Array5<u64>,
    /// `[task, step, state, action]`; zero until observed.
    reward_estimate: Array4<f64>,
    /// `[step, state, action]`; one visit reveals every task's reward.
    reward_observed: Array3<bool>,
    confidence_constant: f64,
    radius_scale: f64,
}

impl EstimatorState {
    pub fn new(dims: Dims, initial_dists: Vec<Array1<f64>>, cfg: &ConfidenceConfig) -> Result<Self> {
        cfg.validate()?;
        if initial_dists.len() != dims.n_groups
            || initial_dists.iter().any(|mu| mu.len() != dims.n_states)
        {
            return Err(Error::Dimension(
                "initial distributions do not match model dimensions".into(),
            ));
        }
        let Dims {
            n_groups: z,
            n_states: s,
            n_actions: a,
            horizon: h,
            n_tasks: m,
        } = dims;
        Ok(EstimatorState {
            dims,
            initial_dists,
            counts: Array4::zeros((z, h, s, a)),
            next_counts: Array5::zeros((z, h, s, a, s)),
            reward_estimate: Array4::zeros((m, h, s, a)),
            reward_observed: Array3::from_elem((h, s, a), false),
            confidence_constant: confidence_constant(cfg, &dims),
            radius_scale: cfg.radius_scale,
        })
    }

    /// Overrides the confidence constant; used to build synthetic states.
    pub fn with_confidence_constant(mut self, constant: f64) -> Self {
        self.confidence_constant = constant;
        self
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn initial_dist(&self, group: usize) -> ArrayView1<'_, f64> {
        self.initial_dists[group].view()
    }

    pub fn initial_dists(&self) -> &[Array1<f64>] {
        &self.initial_dists
    }

    pub fn confidence_constant(&self) -> f64 {
        self.confidence_constant
    }

    pub fn radius_scale(&self) -> f64 {
        self.radius_scale
    }

    pub fn count(&self, group: usize, step: usize, state: usize, action: usize) -> u64 {
        self.counts[[group, step, state, action]]
    }

    pub fn counts(&self) -> &Array4<u64> {
        &self.counts
    }

    pub fn next_counts(&self) -> &Array5<u64> {
        &self.next_counts
    }

    /// `[task, step, state, action]`.
    pub fn reward_estimate(&self) -> &Array4<f64> {
        &self.reward_estimate
    }

    pub fn reward_observed(&self, step: usize, state: usize, action: usize) -> bool {
        self.reward_observed[[step, state, action]]
    }

    /// Records one trajectory. Counts and next-state counts are incremented
    /// along the path; rewards are stored the first time a cell is seen and
    /// never overwritten afterwards.
    pub fn update_from_trajectory(&mut self, traj: &Trajectory) -> Result<()> {
        let d = &self.dims;
        if traj.group >= d.n_groups || traj.steps.len() != d.horizon || traj.final_state >= d.n_states {
            return Err(Error::Dimension(format!(
                "trajectory (group {}, {} steps) does not match estimator dimensions",
                traj.group,
                traj.steps.len()
            )));
        }
        for (i, st) in traj.steps.iter().enumerate() {
            if st.step != i
                || st.state >= d.n_states
                || st.action >= d.n_actions
                || st.rewards.len() != d.n_tasks
            {
                return Err(Error::Dimension(format!("malformed trajectory step {i}")));
            }
        }
        let z = traj.group;
        for (i, st) in traj.steps.iter().enumerate() {
            let (h, s, a) = (st.step, st.state, st.action);
            let next = traj.next_state(i);
            self.counts[[z, h, s, a]] += 1;
            self.next_counts[[z, h, s, a, next]] += 1;
            if !self.reward_observed[[h, s, a]] {
                self.reward_observed[[h, s, a]] = true;
                for (m, &r) in st.rewards.iter().enumerate() {
                    self.reward_estimate[[m, h, s, a]] = r;
                }
            }
        }
        Ok(())
    }

    /// `next_counts / max(count, 1)`; the zero vector for an unvisited cell.
    pub fn empirical_transition(&self, group: usize, step: usize, state: usize, action: usize) -> Array1<f64> {
        let n = self.counts[[group, step, state, action]].max(1) as f64;
        self.next_counts
            .slice(ndarray::s![group, step, state, action, ..])
            .mapv(|c| c as f64 / n)
    }

    /// Full empirical transition table of one group, `[step, state, action, next]`.
    pub fn empirical_transitions(&self, group: usize) -> Array4<f64> {
        let Dims {
            n_states: s,
            n_actions: a,
            horizon: h,
            ..
        } = self.dims;
        let mut out = Array4::zeros((h, s, a, s));
        for hh in 0..h {
            for ss in 0..s {
                for aa in 0..a {
                    let n = self.counts[[group, hh, ss, aa]];
                    if n == 0 {
                        continue;
                    }
                    let inv = 1.0 / n as f64;
                    for next in 0..s {
                        out[[hh, ss, aa, next]] =
                            self.next_counts[[group, hh, ss, aa, next]] as f64 * inv;
                    }
                }
            }
        }
        out
    }

    /// `radius_scale * sqrt(C / max(count, 1))`.
    pub fn confidence_radius(&self, group: usize, step: usize, state: usize, action: usize) -> f64 {
        self.radius_scale
            * radius_for_count(self.confidence_constant, self.counts[[group, step, state, action]])
    }

    /// Radii of every cell, `[group, step, state, action]`.
    pub fn radii(&self) -> Array4<f64> {
        self.counts
            .mapv(|n| self.radius_scale * radius_for_count(self.confidence_constant, n))
    }

    /// Sets every count of a cell directly. Test and synthetic-model helper:
    /// `next` must have one entry per state and sums to the new count.
    pub fn set_cell(&mut self, group: usize, step: usize, state: usize, action: usize, next: &[u64]) {
        assert_eq!(next.len(), self.dims.n_states);
        let total: u64 = next.iter().sum();
        self.counts[[group, step, state, action]] = total;
        for (s2, &c) in next.iter().enumerate() {
            self.next_counts[[group, step, state, action, s2]] = c;
        }
    }

    /// Marks a reward cell as observed with the given per-task values.
    pub fn set_reward(&mut self, step: usize, state: usize, action: usize, rewards: &[f64]) {
        assert_eq!(rewards.len(), self.dims.n_tasks);
        self.reward_observed[[step, state, action]] = true;
        for (m, &r) in rewards.iter().enumerate() {
            self.reward_estimate[[m, step, state, action]] = r;
        }
    }
}
