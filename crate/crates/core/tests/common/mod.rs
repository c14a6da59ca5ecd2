//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use mtfair::estimation::{ConfidenceConfig, EstimatorState};
use mtfair::mdp::{Dims, TaskedGroupMDP, TimedPolicy};
use mtfair::simplex::{LinearProgram, Sense};
use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum Textbook {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

const EPS: f64 = 1e-9;

/// Plain two-phase full-tableau simplex with Bland's rule from the first
/// pivot: no crash basis, no pricing heuristics, no sparsity tricks.
pub fn textbook_simplex(lp: &LinearProgram) -> Textbook {
    let n = lp.n_vars();
    let rows = lp.constraints();
    let m = rows.len();
    // normalized rows: rhs >= 0
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    let mut senses = Vec::with_capacity(m);
    for c in rows {
        let mut row = vec![0.0; n];
        for &(j, v) in &c.coeffs {
            row[j] += v;
        }
        let (row, rhs, sense) = if c.rhs < 0.0 {
            let flipped = match c.sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
            (row.iter().map(|v| -v).collect(), -c.rhs, flipped)
        } else {
            (row, c.rhs, c.sense)
        };
        a.push(row);
        b.push(rhs);
        senses.push(sense);
    }
    // columns: structural | slack/surplus per inequality | artificial per Ge/Eq row
    let n_slack = senses.iter().filter(|s| **s != Sense::Eq).count();
    let n_art = senses.iter().filter(|s| **s != Sense::Le).count();
    let width = n + n_slack + n_art;
    let mut t = vec![vec![0.0; width + 1]; m];
    let mut basis = vec![0usize; m];
    let (mut si, mut ai) = (n, n + n_slack);
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][width] = b[i];
        match senses[i] {
            Sense::Le => {
                t[i][si] = 1.0;
                basis[i] = si;
                si += 1;
            }
            Sense::Ge => {
                t[i][si] = -1.0;
                si += 1;
                t[i][ai] = 1.0;
                basis[i] = ai;
                ai += 1;
            }
            Sense::Eq => {
                t[i][ai] = 1.0;
                basis[i] = ai;
                ai += 1;
            }
        }
    }
    let art_start = n + n_slack;

    // phase 1: maximize -sum(artificials)
    let mut cost = vec![0.0; width];
    for c in cost.iter_mut().skip(art_start) {
        *c = -1.0;
    }
    if run_phase(&mut t, &mut basis, &cost, width, width) == PhaseEnd::Unbounded {
        unreachable!("phase 1 is bounded");
    }
    let infeas: f64 = (0..m).filter(|&i| basis[i] >= art_start).map(|i| t[i][width]).sum();
    if infeas > 1e-7 {
        return Textbook::Infeasible;
    }
    // drive zero-level artificials out where possible
    for i in 0..m {
        if basis[i] >= art_start {
            if let Some(j) = (0..art_start).find(|&j| t[i][j].abs() > EPS) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }

    // phase 2 on the original objective, artificials barred from entering
    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(lp.objective());
    if run_phase(&mut t, &mut basis, &cost, width, art_start) == PhaseEnd::Unbounded {
        return Textbook::Unbounded;
    }
    let mut x = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[i][width];
        }
    }
    let objective = x.iter().zip(lp.objective()).map(|(a, b)| a * b).sum();
    Textbook::Optimal { x, objective }
}

#[derive(PartialEq)]
enum PhaseEnd {
    Optimal,
    Unbounded,
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
    let p = t[r][c];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i != r {
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    basis[r] = c;
}

/// Maximizes `cost . x` over columns `0..enter_limit`; reduced costs are
/// recomputed from scratch each iteration.
fn run_phase(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], width: usize, enter_limit: usize) -> PhaseEnd {
    let m = t.len();
    for _ in 0..100_000 {
        let entering = (0..enter_limit).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let z: f64 = (0..m).map(|i| cost[basis[i]] * t[i][j]).sum();
            cost[j] - z > EPS
        });
        let Some(j) = entering else {
            return PhaseEnd::Optimal;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][j] > EPS {
                let ratio = t[i][width] / t[i][j];
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-12 || ((ratio - lr).abs() <= 1e-12 && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        match leave {
            None => return PhaseEnd::Unbounded,
            Some((i, _)) => pivot(t, basis, i, j),
        }
    }
    panic!("textbook simplex did not terminate");
}

/// Monte Carlo estimate of one group's return and its standard error.
pub fn monte_carlo_return(mdp: &TaskedGroupMDP, group: usize, task: usize, policy: &TimedPolicy, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = mdp.group(group);
    let draw = |probs: ndarray::ArrayView1<f64>, rng: &mut ChaCha8Rng| {
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
    };
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut s = draw(g.initial_dist.view(), &mut rng);
        let mut ret = 0.0;
        for h in 0..mdp.horizon() {
            let a = draw(policy.0.slice(ndarray::s![h, s, ..]), &mut rng);
            ret += mdp.rewards()[[task, h, s, a]];
            s = draw(g.transition.slice(ndarray::s![h, s, a, ..]), &mut rng);
        }
        sum += ret;
        sq += ret * ret;
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

/// Random stochastic policy, one simplex row per `(step, state)`.
pub fn random_policy(h: usize, s: usize, a: usize, rng: &mut ChaCha8Rng) -> TimedPolicy {
    let mut p = Array3::zeros((h, s, a));
    for hh in 0..h {
        for ss in 0..s {
            let w: Vec<f64> = (0..a).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let t: f64 = w.iter().sum();
            for aa in 0..a {
                p[[hh, ss, aa]] = w[aa] / t;
            }
        }
    }
    TimedPolicy(p)
}

/// An estimator built from `n_samples` simulated next states per cell
/// (some cells left unvisited), with the confidence constant set to the
/// smallest value that makes `|P - P_hat| <= beta` hold at every entry.
/// This is the good event by construction.
pub fn good_event_estimator(mdp: &TaskedGroupMDP, max_samples: u64, seed: u64) -> EstimatorState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d: Dims = mdp.dims();
    let initial = mdp.groups().iter().map(|g| g.initial_dist.clone()).collect();
    let mut est = EstimatorState::new(d, initial, &ConfidenceConfig::new(0.1, 10)).unwrap();
    let mut constant: f64 = 0.0;
    for z in 0..d.n_groups {
        let g = mdp.group(z);
        for h in 0..d.horizon {
            for s in 0..d.n_states {
                for a in 0..d.n_actions {
                    let n = rng.gen_range(0..=max_samples);
                    let row = g.transition.slice(ndarray::s![h, s, a, ..]);
                    let mut next = vec![0u64; d.n_states];
                    for _ in 0..n {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        let mut pick = d.n_states - 1;
                        for (i, &p) in row.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                pick = i;
                                break;
                            }
                        }
                        next[pick] += 1;
                    }
                    est.set_cell(z, h, s, a, &next);
                    let p_hat = est.empirical_transition(z, h, s, a);
                    let dev = row.iter().zip(p_hat.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                    constant = constant.max(dev * dev * n.max(1) as f64);
                }
            }
        }
    }
    for h in 0..d.horizon {
        for s in 0..d.n_states {
            for a in 0..d.n_actions {
                let r: Vec<f64> = (0..d.n_tasks).map(|m| mdp.rewards()[[m, h, s, a]]).collect();
                est.set_reward(h, s, a, &r);
            }
        }
    }
    // a hair above the minimum so the bound is not decided by rounding
    est.with_confidence_constant(constant * (1.0 + 1e-9) + 1e-12)
}

pub fn small_dims(rng: &mut ChaCha8Rng) -> Dims {
    Dims {
        n_groups: 2,
        n_states: rng.gen_range(1..=3),
        n_actions: 2,
        horizon: rng.gen_range(1..=3),
        n_tasks: 2,
    }
}

pub fn point_mass(n: usize, at: usize) -> Array1<f64> {
    let mut v = Array1::zeros(n);
    v[at] = 1.0;
    v
}
