mod common;

use mtfair::envs::random_small_mdp;
use mtfair::estimation::{ConfidenceConfig, EstimatorState};
use mtfair::evaluation::{evaluate_return, evaluate_under_estimate, fairness_gaps};
use mtfair::mdp::{policy_from_occupancy, sample_trajectory, Dims, GroupDynamics, TaskedGroupMDP, TimedPolicySet};
use mtfair::rewards::{reward_set, AlphaVariant};
use ndarray::{array, s, Array3, Array4, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::random_policy;

fn dims_strategy() -> impl Strategy<Value = Dims> {
    (1usize..=3, 1usize..=4, 1usize..=3, 1usize..=5, 1usize..=3).prop_map(|(z, s, a, h, m)| Dims {
        n_groups: z,
        n_states: s,
        n_actions: a,
        horizon: h,
        n_tasks: m,
    })
}

fn policies(d: &Dims, seed: u64) -> TimedPolicySet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TimedPolicySet::new((0..d.n_groups).map(|_| random_policy(d.horizon, d.n_states, d.n_actions, &mut rng)).collect())
}

fn estimator(mdp: &TaskedGroupMDP, k: usize) -> EstimatorState {
    let initial = mdp.groups().iter().map(|g| g.initial_dist.clone()).collect();
    EstimatorState::new(mdp.dims(), initial, &ConfidenceConfig::new(0.1, k)).unwrap()
}

#[test]
fn trajectories_stay_in_range_over_many_seeds() {
    let d = Dims {
        n_groups: 2,
        n_states: 4,
        n_actions: 3,
        horizon: 6,
        n_tasks: 2,
    };
    let mdp = random_small_mdp(d, 1).unwrap();
    let pi = policies(&d, 2);
    for seed in 0..1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = (seed % 2) as usize;
        let t = sample_trajectory(&mdp, z, &pi, &mut rng).unwrap();
        assert_eq!(t.group, z);
        assert_eq!(t.steps.len(), d.horizon);
        for (i, st) in t.steps.iter().enumerate() {
            assert_eq!(st.step, i);
            assert!(st.state < d.n_states && st.action < d.n_actions);
            let expected: Vec<f64> = (0..d.n_tasks).map(|m| mdp.rewards()[[m, i, st.state, st.action]]).collect();
            assert_eq!(st.rewards, expected);
        }
        assert!(t.final_state < d.n_states);
    }
}

#[test]
fn estimated_transition_of_bernoulli_row() {
    // one state pair, both actions: go to state 1 with probability 0.6
    let mut p = Array4::zeros((1, 2, 1, 2));
    for s in 0..2 {
        p[[0, s, 0, 0]] = 0.4;
        p[[0, s, 0, 1]] = 0.6;
    }
    let g = GroupDynamics {
        group_id: 0,
        initial_dist: array![1.0, 0.0],
        transition: p,
    };
    let mdp = TaskedGroupMDP::new(vec![g], Array4::zeros((1, 1, 2, 1))).unwrap();
    let pi = TimedPolicySet::shared(mtfair::mdp::TimedPolicy::uniform(1, 2, 1), 1);
    let mut est = estimator(&mdp, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        est.update_from_trajectory(&sample_trajectory(&mdp, 0, &pi, &mut rng).unwrap()).unwrap();
    }
    assert_eq!(est.count(0, 0, 0, 0), 100);
    let p_hat = est.empirical_transition(0, 0, 0, 0);
    assert!((p_hat[1] - 0.6).abs() <= 0.15, "estimate {}", p_hat[1]);
}

#[test]
fn empty_estimator_optimistic_return_in_closed_form() {
    // |S| = 2, H = 2, point-mass start: only the first step is reachable
    // under the all-zero estimate, so J = |S| H sqrt(C)
    let d = Dims {
        n_groups: 1,
        n_states: 2,
        n_actions: 2,
        horizon: 2,
        n_tasks: 1,
    };
    let mut mdp = random_small_mdp(d, 3).unwrap();
    let mut groups = mdp.groups().to_vec();
    groups[0].initial_dist = array![0.0, 1.0];
    mdp = TaskedGroupMDP::new(groups, mdp.rewards().clone()).unwrap();
    let est = estimator(&mdp, 50);
    let c = (2.0f64 * 1.0 * 4.0 * 2.0 * 2.0 * 50.0 / 0.1).ln();
    let rewards = reward_set(&est, 1.0, 0.0, AlphaVariant::Standard).unwrap();
    let pi = &policies(&d, 4).policies[0];
    let j = evaluate_under_estimate(pi, 0, 0, &est, &rewards.optimistic).unwrap();
    assert!((j - 2.0 * 2.0 * c.sqrt()).abs() < 1e-12);
    let lower = evaluate_under_estimate(pi, 0, 0, &est, &rewards.pessimistic).unwrap();
    assert!((lower + 2.0 * 2.0 * c.sqrt()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn same_seed_same_trajectory(d in dims_strategy(), model in 0u64..1000, seed in any::<u64>()) {
        let mdp = random_small_mdp(d, model).unwrap();
        let pi = policies(&d, model + 1);
        for z in 0..d.n_groups {
            let a = sample_trajectory(&mdp, z, &pi, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = sample_trajectory(&mdp, z, &pi, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn extracted_policies_are_distributions(
        h in 1usize..4, ns in 1usize..4, na in 1usize..4,
        cells in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0, Just(-1e-10)], 64),
    ) {
        let d = Array3::from_shape_fn((h, ns, na), |(a, b, c)| cells[(a * ns + b) * na + c]);
        let pi = policy_from_occupancy(d.view());
        prop_assert!(pi.is_valid());
    }

    #[test]
    fn estimator_invariants_hold(d in dims_strategy(), model in 0u64..1000, episodes in 0usize..30) {
        let mdp = random_small_mdp(d, model).unwrap();
        let pi = policies(&d, model ^ 0x55);
        let mut est = estimator(&mdp, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(model);
        let mut first_rewards = None;
        for _ in 0..episodes {
            for z in 0..d.n_groups {
                est.update_from_trajectory(&sample_trajectory(&mdp, z, &pi, &mut rng).unwrap()).unwrap();
            }
            if first_rewards.is_none() {
                let seen: Vec<_> = ndarray::indices((d.horizon, d.n_states, d.n_actions))
                    .into_iter()
                    .filter(|&(h, s, a)| est.reward_observed(h, s, a))
                    .collect();
                first_rewards = Some((est.reward_estimate().clone(), seen));
            }
        }
        // next-state counts add up to visit counts
        prop_assert_eq!(est.next_counts().sum_axis(Axis(4)), est.counts().clone());
        for z in 0..d.n_groups {
            for h in 0..d.horizon {
                prop_assert_eq!(est.counts().slice(s![z, h, .., ..]).sum(), episodes as u64);
                for st in 0..d.n_states {
                    for a in 0..d.n_actions {
                        let total = est.empirical_transition(z, h, st, a).sum();
                        let visited = est.count(z, h, st, a) > 0;
                        let ok = if visited { (total - 1.0).abs() <= 1e-12 } else { total == 0.0 };
                        prop_assert!(ok, "row sum {} with count {}", total, est.count(z, h, st, a));
                    }
                }
            }
        }
        // observed rewards are the true ones and never change
        if let Some((table, seen)) = first_rewards {
            for (h, st, a) in seen {
                for m in 0..d.n_tasks {
                    prop_assert_eq!(est.reward_estimate()[[m, h, st, a]], table[[m, h, st, a]]);
                    prop_assert_eq!(table[[m, h, st, a]], mdp.rewards()[[m, h, st, a]]);
                }
            }
        }
    }

    #[test]
    fn radius_never_grows_with_visits(steps in prop::collection::vec(0u64..5, 1..40), c in 0.0f64..50.0) {
        let d = Dims { n_groups: 1, n_states: 2, n_actions: 1, horizon: 1, n_tasks: 1 };
        let mdp = random_small_mdp(d, 0).unwrap();
        let mut est = estimator(&mdp, 10).with_confidence_constant(c);
        let mut n = 0;
        let mut last = est.confidence_radius(0, 0, 0, 0);
        for inc in steps {
            n += inc;
            est.set_cell(0, 0, 0, 0, &[n, 0]);
            let r = est.confidence_radius(0, 0, 0, 0);
            prop_assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn true_returns_lie_in_zero_to_horizon(d in dims_strategy(), model in 0u64..1000) {
        let mdp = random_small_mdp(d, model).unwrap();
        let pi = policies(&d, model + 9);
        for z in 0..d.n_groups {
            let g = mdp.group(z);
            for m in 0..d.n_tasks {
                let j = evaluate_return(pi.get(z), g.initial_dist.view(), g.transition.view(), mdp.task_rewards(m)).unwrap();
                prop_assert!((0.0..=d.horizon as f64 + 1e-12).contains(&j));
            }
        }
        let gaps = fairness_gaps(&mdp, &pi).unwrap();
        for m in 0..d.n_tasks {
            for i in 0..d.n_groups {
                for j in 0..d.n_groups {
                    prop_assert_eq!(gaps.gap(m, i, j), gaps.gap(m, j, i));
                }
            }
        }
    }

    #[test]
    fn revealed_estimate_evaluates_like_the_truth(d in dims_strategy(), model in 0u64..1000) {
        // deterministic transitions make a single visit reveal the row exactly
        let base = random_small_mdp(d, model).unwrap();
        let groups: Vec<GroupDynamics> = base.groups().iter().map(|g| {
            let mut p = Array4::zeros(g.transition.dim());
            for ((h, st, a, _), _) in g.transition.indexed_iter() {
                p[[h, st, a, (st + a + h) % d.n_states]] = 1.0;
            }
            GroupDynamics { transition: p, ..g.clone() }
        }).collect();
        let mdp = TaskedGroupMDP::new(groups, base.rewards().clone()).unwrap();
        let mut est = estimator(&mdp, 10);
        for z in 0..d.n_groups {
            for ((h, st, a, n), p) in mdp.group(z).transition.indexed_iter() {
                if *p == 1.0 {
                    let mut next = vec![0; d.n_states];
                    next[n] = 1;
                    est.set_cell(z, h, st, a, &next);
                }
            }
        }
        for ((m, h, st, a), _) in mdp.rewards().indexed_iter() {
            if m == 0 {
                let r: Vec<f64> = (0..d.n_tasks).map(|k| mdp.rewards()[[k, h, st, a]]).collect();
                est.set_reward(h, st, a, &r);
            }
        }
        let est = est.with_confidence_constant(0.0);
        let rewards = reward_set(&est, 1.0, 0.0, AlphaVariant::Standard).unwrap();
        let pi = policies(&d, model + 3);
        for z in 0..d.n_groups {
            let g = mdp.group(z);
            for m in 0..d.n_tasks {
                let truth = evaluate_return(pi.get(z), g.initial_dist.view(), g.transition.view(), mdp.task_rewards(m)).unwrap();
                let est_j = evaluate_under_estimate(pi.get(z), z, m, &est, &rewards.optimistic).unwrap();
                prop_assert_eq!(truth, est_j);
            }
        }
    }
}
