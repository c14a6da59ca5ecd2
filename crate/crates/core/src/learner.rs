//! The episode loop: estimate, build reward variants, test the fallback
//! condition, plan, execute in every group, update counters.
//!
//! The same loop runs the single-task baseline, which constrains and
//! optimizes only one task but is still evaluated on all of them.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{ConfidenceConfig, EstimatorState};
use crate::evaluation::{return_table, FairnessGapReport, ReturnTable};
use crate::mdp::{sample_trajectory, Dims, TaskedGroupMDP, TimedPolicy, TimedPolicySet};
use crate::mps::write_mps;
use crate::oracle::{compute_fair_optimum, RegretOracle};
use crate::planner::{plan_episode, Mode, PlannerConfig, UnreachedRows, FEASIBILITY_TOL};
use crate::rewards::AlphaVariant;
use crate::simplex::DenseSimplex;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// Fairness enforced and return maximized on every task.
    MultiTask,
    /// Fairness enforced and return maximized on one task only.
    Baseline { task: usize },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::MultiTask => "multitask",
            Algorithm::Baseline { .. } => "baseline",
        }
    }

    fn tasks(&self, n_tasks: usize) -> Vec<usize> {
        match *self {
            Algorithm::MultiTask => (0..n_tasks).collect(),
            Algorithm::Baseline { task } => vec![task],
        }
    }
}

/// Which groups are executed each episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SamplingSchedule {
    /// One trajectory per group per episode.
    #[default]
    AllGroups,
    /// Only group `k mod |Z|` is executed in episode `k`.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessConfig {
    pub epsilon: f64,
    pub epsilon0: f64,
    /// The initial policy list, assumed to have true gap at most `epsilon0`.
    pub pi0: TimedPolicySet,
    pub delta: f64,
    pub n_episodes: usize,
    /// Multiplier on every confidence radius; `1.0` is the plain radius.
    pub radius_scale: f64,
    pub alpha: AlphaVariant,
    pub schedule: SamplingSchedule,
    /// Completion of policy rows the program does not reach.
    pub unreached: UnreachedRows,
}

impl FairnessConfig {
    pub fn new(epsilon: f64, epsilon0: f64, pi0: TimedPolicySet, delta: f64, n_episodes: usize) -> Self {
        FairnessConfig {
            epsilon,
            epsilon0,
            pi0,
            delta,
            n_episodes,
            radius_scale: 1.0,
            alpha: AlphaVariant::Standard,
            schedule: SamplingSchedule::AllGroups,
            unreached: UnreachedRows::Uniform,
        }
    }

    pub fn confidence(&self) -> ConfidenceConfig {
        ConfidenceConfig {
            delta: self.delta,
            n_episodes: self.n_episodes,
            radius_scale: self.radius_scale,
        }
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= dims.horizon as f64) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, H = {}], got {}",
                dims.horizon, self.epsilon
            )));
        }
        if !(self.epsilon0 >= 0.0 && self.epsilon0 < self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon0 must lie in [0, epsilon), got {} with epsilon {}",
                self.epsilon0, self.epsilon
            )));
        }
        self.confidence().validate()?;
        self.pi0.check_for(dims)?;
        if !self.pi0.is_valid() {
            return Err(Error::Config("initial policy rows are not distributions".into()));
        }
        Ok(())
    }

    fn planner(&self, algo: Algorithm, n_tasks: usize) -> Result<PlannerConfig> {
        if let Algorithm::Baseline { task } = algo {
            if task >= n_tasks {
                return Err(Error::Config(format!("baseline task {task} out of range (M = {n_tasks})")));
            }
        }
        Ok(PlannerConfig {
            epsilon: self.epsilon,
            epsilon0: self.epsilon0,
            alpha: self.alpha,
            constrained_tasks: algo.tasks(n_tasks),
            objective_tasks: algo.tasks(n_tasks),
            unreached: self.unreached,
        })
    }
}

/// One row of the episode log. Episodes are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub mode: Mode,
    /// True returns `[task, group]` of the executed policy list.
    pub returns: ReturnTable,
    /// True gaps `[task, pair]`, pairs in `(i, j)`, `i < j` order.
    pub gaps: Array2<f64>,
    /// Per-task regret increment against the fair optimum.
    pub regret: Vec<f64>,
    /// Wall-clock seconds spent on the episode. Not persisted in CSV logs.
    pub duration_secs: f64,
}

impl EpisodeRecord {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }

    pub fn task_max_gap(&self, task: usize) -> f64 {
        self.gaps.row(task).iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub episodes: usize,
    pub cumulative_regret: Vec<f64>,
    pub summed_regret: f64,
    pub max_gap: Vec<f64>,
    /// Episodes whose true gap on the task exceeded epsilon.
    pub violation_episodes: Vec<usize>,
    pub fallback_episodes: usize,
    /// Episodes where the program was infeasible despite the fallback test.
    pub anomalies: usize,
}

impl RunSummary {
    fn new(seed: u64, n_tasks: usize) -> Self {
        RunSummary {
            seed,
            episodes: 0,
            cumulative_regret: vec![0.0; n_tasks],
            summed_regret: 0.0,
            max_gap: vec![0.0; n_tasks],
            violation_episodes: vec![0; n_tasks],
            fallback_episodes: 0,
            anomalies: 0,
        }
    }

    fn absorb(&mut self, rec: &EpisodeRecord, epsilon: f64, anomaly: bool) {
        self.episodes += 1;
        for (m, inc) in rec.regret.iter().enumerate() {
            self.cumulative_regret[m] += inc;
            let g = rec.task_max_gap(m);
            self.max_gap[m] = self.max_gap[m].max(g);
            if is_violation(g, epsilon) {
                self.violation_episodes[m] += 1;
            }
        }
        self.summed_regret = self.cumulative_regret.iter().sum();
        if rec.mode == Mode::Fallback {
            self.fallback_episodes += 1;
        }
        if anomaly {
            self.anomalies += 1;
        }
    }

    pub fn any_violation(&self) -> bool {
        self.violation_episodes.iter().any(|&n| n > 0)
    }
}

/// A true gap counts as a violation when it exceeds epsilon by more than
/// the LP feasibility tolerance.
pub fn is_violation(gap: f64, epsilon: f64) -> bool {
    gap > epsilon + FEASIBILITY_TOL
}

/// Everything needed to continue a run after episode `episode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub episode: usize,
    pub estimator: EstimatorState,
    pub summary: RunSummary,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found,
                supported: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Random stream for one episode: streams are keyed by the episode index,
/// so a resumed run draws exactly what an uninterrupted run would.
pub fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

pub struct Learner<'a> {
    mdp: &'a TaskedGroupMDP,
    cfg: FairnessConfig,
    algorithm: Algorithm,
    planner: PlannerConfig,
    oracle: RegretOracle,
    est: EstimatorState,
    seed: u64,
    episode: usize,
    summary: RunSummary,
    backend: DenseSimplex,
    dump_dir: Option<PathBuf>,
}

impl<'a> Learner<'a> {
    pub fn new(mdp: &'a TaskedGroupMDP, cfg: FairnessConfig, algorithm: Algorithm, seed: u64) -> Result<Self> {
        let oracle = compute_fair_optimum(mdp, cfg.epsilon)?;
        Self::with_oracle(mdp, cfg, algorithm, seed, oracle)
    }

    /// Reuses a precomputed fair optimum (it depends only on the model and epsilon).
    pub fn with_oracle(
        mdp: &'a TaskedGroupMDP,
        cfg: FairnessConfig,
        algorithm: Algorithm,
        seed: u64,
        oracle: RegretOracle,
    ) -> Result<Self> {
        let dims = mdp.dims();
        cfg.validate(&dims)?;
        let planner = cfg.planner(algorithm, dims.n_tasks)?;
        let initial = mdp.groups().iter().map(|g| g.initial_dist.clone()).collect();
        let est = EstimatorState::new(dims, initial, &cfg.confidence())?;
        Ok(Learner {
            mdp,
            cfg,
            algorithm,
            planner,
            oracle,
            est,
            seed,
            episode: 0,
            summary: RunSummary::new(seed, dims.n_tasks),
            backend: DenseSimplex::default(),
            dump_dir: None,
        })
    }

    /// Writes every solved program as `lp_seed<seed>_ep<k>.mps` into `dir`.
    pub fn dump_lps_to(&mut self, dir: PathBuf) {
        self.dump_dir = Some(dir);
    }

    pub fn oracle(&self) -> &RegretOracle {
        &self.oracle
    }

    pub fn estimator(&self) -> &EstimatorState {
        &self.est
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn summary(&self) -> &RunSummary {
        &self.summary
    }

    pub fn is_finished(&self) -> bool {
        self.episode >= self.cfg.n_episodes
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            algorithm: self.algorithm,
            seed: self.seed,
            episode: self.episode,
            estimator: self.est.clone(),
            summary: self.summary.clone(),
        }
    }

    pub fn resume(&mut self, ckpt: Checkpoint) -> Result<()> {
        if ckpt.algorithm != self.algorithm || ckpt.seed != self.seed {
            return Err(Error::Config("checkpoint belongs to a different run".into()));
        }
        if ckpt.estimator.dims() != self.est.dims() {
            return Err(Error::Dimension("checkpoint estimator does not match the model".into()));
        }
        self.est = ckpt.estimator;
        self.episode = ckpt.episode;
        self.summary = ckpt.summary;
        Ok(())
    }

    /// Plays one episode and returns its record.
    pub fn step(&mut self) -> Result<EpisodeRecord> {
        let start = Instant::now();
        let plan = plan_episode(&self.est, &self.cfg.pi0, &self.planner, &self.backend)?;
        if let (Some(dir), Some(lp)) = (&self.dump_dir, &plan.lp) {
            let name = format!("lp_seed{}_ep{}", self.seed, self.episode + 1);
            std::fs::write(dir.join(format!("{name}.mps")), write_mps(&lp.lp, &name))?;
        }

        let mut rng = episode_rng(self.seed, self.episode);
        let n_groups = self.mdp.n_groups();
        let groups: Vec<usize> = match self.cfg.schedule {
            SamplingSchedule::AllGroups => (0..n_groups).collect(),
            SamplingSchedule::RoundRobin => vec![self.episode % n_groups],
        };
        for z in groups {
            let traj = sample_trajectory(self.mdp, z, &plan.policies, &mut rng)?;
            self.est.update_from_trajectory(&traj)?;
        }

        let returns = return_table(self.mdp, &plan.policies)?;
        let gaps = FairnessGapReport::from_returns(&returns).gaps;
        let regret = self.oracle.increments(&returns);
        self.episode += 1;
        let rec = EpisodeRecord {
            episode: self.episode,
            mode: plan.mode,
            returns,
            gaps,
            regret,
            duration_secs: start.elapsed().as_secs_f64(),
        };
        self.summary.absorb(&rec, self.cfg.epsilon, plan.anomaly);
        Ok(rec)
    }

    /// Plays the remaining episodes.
    pub fn run(&mut self) -> Result<Vec<EpisodeRecord>> {
        let mut out = Vec::with_capacity(self.cfg.n_episodes - self.episode.min(self.cfg.n_episodes));
        while !self.is_finished() {
            out.push(self.step()?);
        }
        Ok(out)
    }
}

/// Runs the multi-task learner for `cfg.n_episodes` episodes.
pub fn run_learner(mdp: &TaskedGroupMDP, cfg: &FairnessConfig, seed: u64) -> Result<(Vec<EpisodeRecord>, RunSummary)> {
    let mut l = Learner::new(mdp, cfg.clone(), Algorithm::MultiTask, seed)?;
    let records = l.run()?;
    Ok((records, l.summary.clone()))
}

/// Runs the baseline constrained (and optimized) on one task only.
pub fn run_baseline(
    mdp: &TaskedGroupMDP,
    cfg: &FairnessConfig,
    constrained_task: usize,
    seed: u64,
) -> Result<(Vec<EpisodeRecord>, RunSummary)> {
    let mut l = Learner::new(mdp, cfg.clone(), Algorithm::Baseline { task: constrained_task }, seed)?;
    let records = l.run()?;
    Ok((records, l.summary.clone()))
}

/// A shared policy with the smallest true max gap among the constant-action
/// policies and the uniform policy, with that gap. Earlier candidates win ties.
pub fn default_safe_policy(mdp: &TaskedGroupMDP) -> Result<(TimedPolicySet, f64)> {
    let (h, s, a) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let candidates = (0..a)
        .map(|act| TimedPolicy::constant(h, s, a, act))
        .chain(std::iter::once(TimedPolicy::uniform(h, s, a)));
    let mut best: Option<(TimedPolicySet, f64)> = None;
    for pi in candidates {
        let set = TimedPolicySet::shared(pi, mdp.n_groups());
        let gap = FairnessGapReport::from_returns(&return_table(mdp, &set)?).max_gap;
        if best.as_ref().is_none_or(|(_, g)| gap < *g) {
            best = Some((set, gap));
        }
    }
    Ok(best.expect("at least one action"))
}
