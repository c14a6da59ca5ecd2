//! Environment config files (JSON).
//!
//! ```json
//! { "format_version": 1, "kind": "riverswim", "horizon": 20,
//!   "groups": [ { "p_right": 0.6, "p_stay": 0.3, "p_left": 0.1 }, ... ] }
//!
//! { "format_version": 1, "kind": "tables",
//!   "n_states": 2, "n_actions": 2, "horizon": 3,
//!   "tasks": [ { "stationary": [[r(s,a)]] } | { "per_step": [[[r(h,s,a)]]] } ],
//!   "groups": [ { "initial_dist": [..],
//!                 "transition": { "stationary": [[[P(s'|s,a)]]] } | { "per_step": [[[[..]]]] } } ] }
//! ```
//!
//! Either kind may carry an optional `"initial_policy"`: `"uniform"`,
//! `{ "constant_action": a }` or `{ "tables": [ per group [[[pi(a|h,s)]]] ] }`.

use std::path::Path;

use ndarray::{Array1, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::envs::{build_riverswim_multitask, SwimParams};
use crate::error::{Error, Result};
use crate::mdp::{GroupDynamics, TaskedGroupMDP, TimedPolicy, TimedPolicySet};

pub const ENV_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSpec {
    /// `[state][action]`, repeated at every step.
    Stationary(Vec<Vec<f64>>),
    /// `[step][state][action]`.
    PerStep(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionSpec {
    /// `[state][action][next]`, repeated at every step.
    Stationary(Vec<Vec<Vec<f64>>>),
    /// `[step][state][action][next]`.
    PerStep(Vec<Vec<Vec<Vec<f64>>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub initial_dist: Vec<f64>,
    pub transition: TransitionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    Uniform,
    ConstantAction(usize),
    /// Per group `[step][state][action]`.
    Tables(Vec<Vec<Vec<Vec<f64>>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Riverswim {
        format_version: u32,
        horizon: usize,
        groups: Vec<SwimParams>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_policy: Option<PolicySpec>,
    },
    Tables {
        format_version: u32,
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        tasks: Vec<RewardSpec>,
        groups: Vec<GroupSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_policy: Option<PolicySpec>,
    },
}

fn shape_err(what: &str) -> Error {
    Error::Dimension(format!("{what} has the wrong shape"))
}

fn table3(rows: &[Vec<Vec<f64>>], dim: (usize, usize, usize), what: &str) -> Result<Array3<f64>> {
    let flat: Vec<f64> = rows.iter().flatten().flatten().copied().collect();
    if rows.len() != dim.0 || rows.iter().any(|r| r.len() != dim.1 || r.iter().any(|c| c.len() != dim.2)) {
        return Err(shape_err(what));
    }
    Ok(Array3::from_shape_vec(dim, flat).expect("checked shape"))
}

fn table4(rows: &[Vec<Vec<Vec<f64>>>], dim: (usize, usize, usize, usize), what: &str) -> Result<Array4<f64>> {
    if rows.len() != dim.0 {
        return Err(shape_err(what));
    }
    let mut out = Array4::zeros(dim);
    for (h, r) in rows.iter().enumerate() {
        out.slice_mut(ndarray::s![h, .., .., ..])
            .assign(&table3(r, (dim.1, dim.2, dim.3), what)?);
    }
    Ok(out)
}

impl EnvConfig {
    pub fn format_version(&self) -> u32 {
        match self {
            EnvConfig::Riverswim { format_version, .. } | EnvConfig::Tables { format_version, .. } => *format_version,
        }
    }

    pub fn initial_policy(&self) -> Option<&PolicySpec> {
        match self {
            EnvConfig::Riverswim { initial_policy, .. } | EnvConfig::Tables { initial_policy, .. } => {
                initial_policy.as_ref()
            }
        }
    }

    /// Builds and validates the model.
    pub fn build(&self) -> Result<TaskedGroupMDP> {
        match self {
            EnvConfig::Riverswim { horizon, groups, .. } => build_riverswim_multitask(groups, *horizon),
            EnvConfig::Tables {
                n_states,
                n_actions,
                horizon,
                tasks,
                groups,
                ..
            } => {
                let (s, a, h) = (*n_states, *n_actions, *horizon);
                if tasks.is_empty() {
                    return Err(Error::Config("at least one task is required".into()));
                }
                let mut rewards = Array4::zeros((tasks.len(), h, s, a));
                for (m, t) in tasks.iter().enumerate() {
                    let what = format!("reward table of task {m}");
                    let table = match t {
                        RewardSpec::Stationary(r) => {
                            let one = table3(std::slice::from_ref(r), (1, s, a), &what)?;
                            one.broadcast((h, s, a)).expect("broadcast").to_owned()
                        }
                        RewardSpec::PerStep(r) => table3(r, (h, s, a), &what)?,
                    };
                    rewards.slice_mut(ndarray::s![m, .., .., ..]).assign(&table);
                }
                let mut dyns = Vec::with_capacity(groups.len());
                for (z, g) in groups.iter().enumerate() {
                    let what = format!("transition of group {z}");
                    let transition = match &g.transition {
                        TransitionSpec::Stationary(k) => {
                            let k = table3(k, (s, a, s), &what)?;
                            GroupDynamics::stationary(z, Array1::zeros(0), k.view(), h).transition
                        }
                        TransitionSpec::PerStep(k) => table4(k, (h, s, a, s), &what)?,
                    };
                    dyns.push(GroupDynamics {
                        group_id: z,
                        initial_dist: Array1::from(g.initial_dist.clone()),
                        transition,
                    });
                }
                TaskedGroupMDP::new(dyns, rewards)
            }
        }
    }

    /// Full-table description of a model; loads back to an identical model.
    pub fn from_mdp(mdp: &TaskedGroupMDP) -> Self {
        let (h, s, a) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
        let nested3 = |t: ndarray::ArrayView3<f64>| -> Vec<Vec<Vec<f64>>> {
            (0..t.dim().0)
                .map(|i| (0..t.dim().1).map(|j| t.slice(ndarray::s![i, j, ..]).to_vec()).collect())
                .collect()
        };
        let tasks = (0..mdp.n_tasks()).map(|m| RewardSpec::PerStep(nested3(mdp.task_rewards(m)))).collect();
        let groups = mdp
            .groups()
            .iter()
            .map(|g| GroupSpec {
                initial_dist: g.initial_dist.to_vec(),
                transition: TransitionSpec::PerStep(
                    (0..h).map(|hh| nested3(g.transition.slice(ndarray::s![hh, .., .., ..]))).collect(),
                ),
            })
            .collect();
        EnvConfig::Tables {
            format_version: ENV_FORMAT_VERSION,
            n_states: s,
            n_actions: a,
            horizon: h,
            tasks,
            groups,
            initial_policy: None,
        }
    }
}

impl PolicySpec {
    pub fn build(&self, mdp: &TaskedGroupMDP) -> Result<TimedPolicySet> {
        let (h, s, a, nz) = (mdp.horizon(), mdp.n_states(), mdp.n_actions(), mdp.n_groups());
        let set = match self {
            PolicySpec::Uniform => TimedPolicySet::shared(TimedPolicy::uniform(h, s, a), nz),
            PolicySpec::ConstantAction(act) => {
                if *act >= a {
                    return Err(Error::Config(format!("constant action {act} out of range ({a} actions)")));
                }
                TimedPolicySet::shared(TimedPolicy::constant(h, s, a, *act), nz)
            }
            PolicySpec::Tables(per_group) => {
                if per_group.len() != nz {
                    return Err(shape_err("initial_policy"));
                }
                TimedPolicySet::new(
                    per_group
                        .iter()
                        .map(|t| table3(t, (h, s, a), "initial_policy").map(TimedPolicy))
                        .collect::<Result<_>>()?,
                )
            }
        };
        if !set.is_valid() {
            return Err(Error::Config("initial_policy rows are not distributions".into()));
        }
        Ok(set)
    }
}

/// Parses a config, checking `format_version` before the schema so that
/// newer files get a version error rather than a field error.
pub fn parse_env_config(text: &str, path: &Path) -> Result<EnvConfig> {
    let parse_err = |source| Error::Parse {
        path: path.to_path_buf(),
        source,
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    match value.get("format_version") {
        None => {
            return Err(Error::Config(format!("{}: missing `format_version`", path.display())));
        }
        Some(v) => {
            let found = v.as_u64().map(|x| x.min(u32::MAX as u64) as u32).unwrap_or(0);
            if found != ENV_FORMAT_VERSION {
                return Err(Error::UnsupportedVersion {
                    found,
                    supported: ENV_FORMAT_VERSION,
                });
            }
        }
    }
    serde_json::from_str(text).map_err(parse_err)
}

pub fn read_env_config(path: &Path) -> Result<EnvConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_env_config(&text, path)
}

/// Loads, builds and validates a model from a config file.
pub fn load_env_config(path: &Path) -> Result<TaskedGroupMDP> {
    read_env_config(path)?.build()
}

pub fn save_env_config(cfg: &EnvConfig, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}
