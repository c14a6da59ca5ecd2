//! Benchmark builders: the two-group, two-task RiverSwim chain and a random
//! small-MDP generator for oracle tests.

use ndarray::{Array1, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Dims, GroupDynamics, TaskedGroupMDP, SIMPLEX_TOL};

pub const RIVERSWIM_STATES: usize = 7;
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
/// First state (0-based) whose rightward action pays the second task.
pub const TASK2_FIRST_STATE: usize = 3;

/// Outcome probabilities of the rightward action in one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwimParams {
    pub p_right: f64,
    pub p_stay: f64,
    pub p_left: f64,
}

impl SwimParams {
    pub const fn new(p_right: f64, p_stay: f64, p_left: f64) -> Self {
        SwimParams {
            p_right,
            p_stay,
            p_left,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = [self.p_right, self.p_stay, self.p_left];
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (p.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Config(format!(
                "swim probabilities ({}, {}, {}) are not a distribution",
                self.p_right, self.p_stay, self.p_left
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiverSwimSpec {
    pub horizon: usize,
    pub groups: Vec<SwimParams>,
}

impl Default for RiverSwimSpec {
    fn default() -> Self {
        RiverSwimSpec {
            horizon: 20,
            groups: vec![SwimParams::new(0.6, 0.3, 0.1), SwimParams::new(0.5, 0.35, 0.15)],
        }
    }
}

impl RiverSwimSpec {
    pub fn build(&self) -> Result<TaskedGroupMDP> {
        build_riverswim_multitask(&self.groups, self.horizon)
    }
}

/// Stationary `[state, action, next]` kernel of one group.
///
/// Left moves one state left (state 0 stays). Right from an interior state
/// moves right, stays or slips left with the given probabilities; at state 0
/// a slip stays put, and at the last state "right" also stays.
pub fn riverswim_kernel(p: &SwimParams) -> Array3<f64> {
    let n = RIVERSWIM_STATES;
    let mut k = Array3::zeros((n, 2, n));
    for s in 0..n {
        k[[s, LEFT, s.saturating_sub(1)]] = 1.0;
        let right = (s + 1).min(n - 1);
        let left = s.saturating_sub(1);
        k[[s, RIGHT, right]] += p.p_right;
        k[[s, RIGHT, s]] += p.p_stay;
        k[[s, RIGHT, left]] += p.p_left;
    }
    k
}

/// Two tasks: the first pays 1 for swimming right in the last state, the
/// second pays 1 for swimming right anywhere from state 3 on. Swimming left
/// never pays. Every group starts in state 0.
pub fn build_riverswim_multitask(group_params: &[SwimParams], horizon: usize) -> Result<TaskedGroupMDP> {
    if group_params.is_empty() {
        return Err(Error::Config("at least one group is required".into()));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let n = RIVERSWIM_STATES;
    let mut mu = Array1::zeros(n);
    mu[0] = 1.0;
    let groups = group_params
        .iter()
        .enumerate()
        .map(|(z, p)| {
            p.validate()?;
            Ok(GroupDynamics::stationary(z, mu.clone(), riverswim_kernel(p).view(), horizon))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rewards = Array4::zeros((2, horizon, n, 2));
    for h in 0..horizon {
        rewards[[0, h, n - 1, RIGHT]] = 1.0;
        for s in TASK2_FIRST_STATE..n {
            rewards[[1, h, s, RIGHT]] = 1.0;
        }
    }
    TaskedGroupMDP::new(groups, rewards)
}

/// Normalized vector of unit exponentials: a uniform draw from the simplex.
fn simplex_row<R: Rng>(n: usize, rng: &mut R) -> Array1<f64> {
    let x: Array1<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total = x.sum();
    if total > 0.0 {
        x / total
    } else {
        Array1::from_elem(n, 1.0 / n as f64)
    }
}

/// Random model with flat-Dirichlet rows and uniform rewards; deterministic per seed.
pub fn random_small_mdp(dims: Dims, seed: u64) -> Result<TaskedGroupMDP> {
    let Dims {
        n_groups,
        n_states: s,
        n_actions: a,
        horizon: h,
        n_tasks: m,
    } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::with_capacity(n_groups);
    for z in 0..n_groups {
        let mu = simplex_row(s, &mut rng);
        let mut transition = Array4::zeros((h, s, a, s));
        for hh in 0..h {
            for ss in 0..s {
                for aa in 0..a {
                    let row = simplex_row(s, &mut rng);
                    transition.slice_mut(ndarray::s![hh, ss, aa, ..]).assign(&row);
                }
            }
        }
        groups.push(GroupDynamics {
            group_id: z,
            initial_dist: mu,
            transition,
        });
    }
    let rewards = Array4::from_shape_simple_fn((m, h, s, a), || rng.gen::<f64>());
    TaskedGroupMDP::new(groups, rewards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{evaluate_return, return_table};
    use crate::mdp::{TimedPolicy, TimedPolicySet};

    #[test]
    fn always_left_earns_nothing() {
        let mdp = RiverSwimSpec::default().build().unwrap();
        let pi = TimedPolicySet::shared(TimedPolicy::constant(20, 7, 2, LEFT), 2);
        assert!(return_table(&mdp, &pi).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_swim_reaches_the_end() {
        for h in [7, 10, 20] {
            let mdp = build_riverswim_multitask(&[SwimParams::new(1.0, 0.0, 0.0)], h).unwrap();
            let g = mdp.group(0);
            let right = TimedPolicy::constant(h, 7, 2, RIGHT);
            let j = evaluate_return(&right, g.initial_dist.view(), g.transition.view(), mdp.task_rewards(0)).unwrap();
            assert_eq!(j, (h - 6) as f64);
        }
    }

    #[test]
    fn default_groups_differ_under_always_right() {
        let mdp = RiverSwimSpec::default().build().unwrap();
        let pi = TimedPolicySet::shared(TimedPolicy::constant(20, 7, 2, RIGHT), 2);
        let r = return_table(&mdp, &pi).unwrap();
        assert!((r.get(0, 0) - r.get(0, 1)).abs() > 1e-3);
        for z in 0..2 {
            assert!(r.get(1, z) >= r.get(0, z));
        }
    }

    #[test]
    fn identical_groups_have_no_gap() {
        let p = SwimParams::new(0.6, 0.3, 0.1);
        let mdp = build_riverswim_multitask(&[p, p], 20).unwrap();
        let pi = TimedPolicySet::shared(TimedPolicy::uniform(20, 7, 2), 2);
        let r = return_table(&mdp, &pi).unwrap();
        assert_eq!(r.get(0, 0), r.get(0, 1));
        assert_eq!(r.get(1, 0), r.get(1, 1));
    }

    #[test]
    fn rejects_bad_triples() {
        assert!(build_riverswim_multitask(&[SwimParams::new(0.6, 0.3, 0.2)], 20).is_err());
        assert!(build_riverswim_multitask(&[SwimParams::new(1.1, -0.1, 0.0)], 20).is_err());
    }

    #[test]
    fn random_models_are_seeded_and_valid() {
        let d = Dims {
            n_groups: 2,
            n_states: 3,
            n_actions: 2,
            horizon: 3,
            n_tasks: 2,
        };
        let a = random_small_mdp(d, 11).unwrap();
        assert_eq!(a, random_small_mdp(d, 11).unwrap());
        assert_ne!(a, random_small_mdp(d, 12).unwrap());
        assert!(a.validate().is_empty());
    }
}
