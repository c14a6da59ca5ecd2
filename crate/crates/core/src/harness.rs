//! Multi-seed experiment orchestration and CSV persistence.
//!
//! Output directory layout:
//!
//! ```text
//! seed_<s>.csv     one row per episode
//! manifest.json    config hash, seeds, code version, full config
//! summary.json     per-seed summaries and cross-seed gap quantiles
//! ```
//!
//! CSV columns, in order: `episode`, `mode`, `return_task<m>_group<z>`
//! (task-major), `gap_task<m>_pair<i>-<j>` (task-major, `i < j`),
//! `regret_task<m>`. Tasks and groups are 0-based. Floats are written in
//! shortest round-trip form, so parsing a file gives back the exact values.
//! Regret columns hold per-episode increments; per-task values can be
//! negative because the comparator optimizes the sum over tasks.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::evaluation::{return_table, FairnessGapReport, ReturnTable};
use crate::learner::{default_safe_policy, Algorithm, EpisodeRecord, FairnessConfig, Learner, RunSummary, SamplingSchedule};
use crate::mdp::{group_pairs, TaskedGroupMDP, TimedPolicySet};
use crate::oracle::{compute_fair_optimum, regret_curve as curve_from_returns, RegretCurve, RegretOracle};
use crate::planner::{Mode, UnreachedRows};
use crate::rewards::AlphaVariant;

pub const MANIFEST_VERSION: u32 = 1;

/// Everything that determines the numbers of a run, except the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub algorithm: Algorithm,
    pub n_episodes: usize,
    pub epsilon: f64,
    pub epsilon0: f64,
    pub delta: f64,
    pub radius_scale: f64,
    pub alpha: AlphaVariant,
    pub schedule: SamplingSchedule,
    pub unreached: UnreachedRows,
}

impl RunConfig {
    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Worker threads; 1 runs seeds sequentially.
    pub parallel: usize,
    /// Write every solved program as MPS under `<out>/lp/`.
    pub dump_lp: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.config.n_episodes == 0 {
            return Err(Error::Config("number of episodes must be positive".into()));
        }
        if self.parallel == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        Ok(())
    }
}

/// The model, initial policy and comparator shared by every seed of a run.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub mdp: TaskedGroupMDP,
    pub fairness: FairnessConfig,
    pub algorithm: Algorithm,
    pub oracle: RegretOracle,
    /// True max gap of the initial policy.
    pub pi0_gap: f64,
}

/// Builds the model, picks the initial policy (config or the default
/// generator) and checks that its true gap is within `epsilon0`.
pub fn prepare(cfg: &RunConfig) -> Result<PreparedRun> {
    let mdp = cfg.env.build()?;
    let (pi0, pi0_gap) = match cfg.env.initial_policy() {
        Some(spec) => {
            let pi0 = spec.build(&mdp)?;
            let gap = FairnessGapReport::from_returns(&return_table(&mdp, &pi0)?).max_gap;
            (pi0, gap)
        }
        None => default_safe_policy(&mdp)?,
    };
    prepare_with(mdp, pi0, pi0_gap, cfg)
}

fn prepare_with(mdp: TaskedGroupMDP, pi0: TimedPolicySet, pi0_gap: f64, cfg: &RunConfig) -> Result<PreparedRun> {
    if pi0_gap > cfg.epsilon0 {
        return Err(Error::Config(format!(
            "initial policy has true gap {pi0_gap}, above epsilon0 = {}",
            cfg.epsilon0
        )));
    }
    let fairness = FairnessConfig {
        epsilon: cfg.epsilon,
        epsilon0: cfg.epsilon0,
        pi0,
        delta: cfg.delta,
        n_episodes: cfg.n_episodes,
        radius_scale: cfg.radius_scale,
        alpha: cfg.alpha,
        schedule: cfg.schedule,
        unreached: cfg.unreached,
    };
    fairness.validate(&mdp.dims())?;
    let oracle = compute_fair_optimum(&mdp, cfg.epsilon)?;
    Ok(PreparedRun {
        mdp,
        fairness,
        algorithm: cfg.algorithm,
        oracle,
        pi0_gap,
    })
}

impl PreparedRun {
    pub fn learner(&self, seed: u64) -> Result<Learner<'_>> {
        Learner::with_oracle(&self.mdp, self.fairness.clone(), self.algorithm, seed, self.oracle.clone())
    }

    /// Runs one seed in memory.
    pub fn run_seed(&self, seed: u64) -> Result<(Vec<EpisodeRecord>, RunSummary)> {
        let mut l = self.learner(seed)?;
        let records = l.run()?;
        Ok((records, l.summary().clone()))
    }
}

pub fn regret_curve(records: &[EpisodeRecord], oracle: &RegretOracle) -> RegretCurve {
    curve_from_returns(records.iter().map(|r| &r.returns), oracle)
}

pub fn csv_header(n_tasks: usize, n_groups: usize) -> Vec<String> {
    let mut h = vec!["episode".to_string(), "mode".to_string()];
    for m in 0..n_tasks {
        for z in 0..n_groups {
            h.push(format!("return_task{m}_group{z}"));
        }
    }
    for m in 0..n_tasks {
        for (i, j) in group_pairs(n_groups) {
            h.push(format!("gap_task{m}_pair{i}-{j}"));
        }
    }
    for m in 0..n_tasks {
        h.push(format!("regret_task{m}"));
    }
    h
}

pub fn write_csv<W: std::io::Write>(out: W, records: &[EpisodeRecord], n_tasks: usize, n_groups: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(n_tasks, n_groups))?;
    for r in records {
        let mut row = vec![r.episode.to_string(), r.mode.to_string()];
        row.extend(r.returns.values.iter().map(|v| v.to_string()));
        row.extend(r.gaps.iter().map(|v| v.to_string()));
        row.extend(r.regret.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn bad_csv(msg: impl Into<String>) -> Error {
    Error::Config(format!("malformed episode log: {}", msg.into()))
}

/// Parses a log written by [`write_csv`]. Durations are not stored and come back as zero.
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<EpisodeRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let n_returns = header.iter().filter(|h| h.starts_with("return_task")).count();
    let n_tasks = header.iter().filter(|h| h.starts_with("regret_task")).count();
    if n_tasks == 0 || n_returns % n_tasks != 0 {
        return Err(bad_csv("cannot infer tasks and groups from the header"));
    }
    let n_groups = n_returns / n_tasks;
    if header != csv_header(n_tasks, n_groups) {
        return Err(bad_csv("unexpected header"));
    }
    let n_pairs = n_groups * (n_groups - 1) / 2;
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad_csv(format!("`{s}`: {e}")));
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let episode = row[0].parse::<usize>().map_err(|e| bad_csv(e.to_string()))?;
        let mode: Mode = row[1].parse().map_err(bad_csv)?;
        let mut it = row.iter().skip(2);
        let mut take = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| num(it.next().unwrap_or(""))).collect() };
        let returns = Array2::from_shape_vec((n_tasks, n_groups), take(n_tasks * n_groups)?).expect("shape");
        let gaps = Array2::from_shape_vec((n_tasks, n_pairs), take(n_tasks * n_pairs)?).expect("shape");
        let regret = take(n_tasks)?;
        out.push(EpisodeRecord {
            episode,
            mode,
            returns: ReturnTable { values: returns },
            gaps,
            regret,
            duration_secs: 0.0,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub code_version: String,
    pub config: RunConfig,
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapQuantiles {
    pub task: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    /// Fraction of seeds with at least one episode above epsilon on this task.
    pub violating_seed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub epsilon: f64,
    pub oracle_task_values: Vec<f64>,
    pub runs: Vec<RunSummary>,
    pub max_gap_quantiles: Vec<GapQuantiles>,
    pub mean_summed_regret: f64,
}

impl ExperimentSummary {
    pub fn from_runs(config_hash: String, epsilon: f64, oracle: &RegretOracle, runs: Vec<RunSummary>) -> Self {
        let n_tasks = oracle.task_values.len();
        let max_gap_quantiles = (0..n_tasks)
            .map(|m| {
                let gaps: Vec<f64> = runs.iter().map(|r| r.max_gap[m]).collect();
                let violating = runs.iter().filter(|r| r.violation_episodes[m] > 0).count();
                GapQuantiles {
                    task: m,
                    min: quantile(&gaps, 0.0),
                    q25: quantile(&gaps, 0.25),
                    median: quantile(&gaps, 0.5),
                    q75: quantile(&gaps, 0.75),
                    max: quantile(&gaps, 1.0),
                    violating_seed_fraction: violating as f64 / runs.len().max(1) as f64,
                }
            })
            .collect();
        let mean_summed_regret = runs.iter().map(|r| r.summed_regret).sum::<f64>() / runs.len().max(1) as f64;
        ExperimentSummary {
            config_hash,
            epsilon,
            oracle_task_values: oracle.task_values.clone(),
            runs,
            max_gap_quantiles,
            mean_summed_regret,
        }
    }
}

pub fn seed_csv_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

/// Removes every file created so far if the run does not complete.
struct Cleanup {
    files: Mutex<Vec<PathBuf>>,
    dirs: Vec<PathBuf>,
    armed: bool,
}

impl Cleanup {
    fn track(&self, p: PathBuf) {
        self.files.lock().expect("cleanup lock").push(p);
    }
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        for f in self.files.get_mut().expect("cleanup lock").iter() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir_all(d);
        }
    }
}

fn run_one(prep: &PreparedRun, seed: u64, out_dir: &Path, lp_dir: Option<&Path>, cleanup: &Cleanup) -> Result<RunSummary> {
    let mut learner = prep.learner(seed)?;
    if let Some(dir) = lp_dir {
        learner.dump_lps_to(dir.to_path_buf());
    }
    let records = learner.run()?;
    let d = prep.mdp.dims();
    let path = out_dir.join(seed_csv_name(seed));
    cleanup.track(path.clone());
    let file = fs::File::create(&path)?;
    write_csv(std::io::BufWriter::new(file), &records, d.n_tasks, d.n_groups)?;
    log::info!(
        "seed {seed}: summed regret {:.3}, fallback episodes {}, max gap {:?}",
        learner.summary().summed_regret,
        learner.summary().fallback_episodes,
        learner.summary().max_gap
    );
    Ok(learner.summary().clone())
}

/// Runs every seed and writes the CSVs, manifest and summary. On any
/// failure the files written by this call are removed.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentSummary> {
    plan.validate()?;
    let prep = prepare(&plan.config)?;
    run_prepared(plan, &prep)
}

pub fn run_prepared(plan: &ExperimentPlan, prep: &PreparedRun) -> Result<ExperimentSummary> {
    plan.validate()?;
    let mut cleanup = Cleanup {
        files: Mutex::new(Vec::new()),
        dirs: Vec::new(),
        armed: true,
    };
    if !plan.out_dir.exists() {
        fs::create_dir_all(&plan.out_dir)?;
        cleanup.dirs.push(plan.out_dir.clone());
    }
    let lp_dir = if plan.dump_lp {
        let d = plan.out_dir.join("lp");
        if !d.exists() {
            fs::create_dir_all(&d)?;
            cleanup.dirs.push(d.clone());
        }
        Some(d)
    } else {
        None
    };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary>>>> =
        Mutex::new((0..plan.seeds.len()).map(|_| None).collect());
    let workers = plan.parallel.min(plan.seeds.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= plan.seeds.len() {
                    break;
                }
                let r = run_one(prep, plan.seeds[i], &plan.out_dir, lp_dir.as_deref(), &cleanup);
                let failed = r.is_err();
                results.lock().expect("results lock")[i] = Some(r);
                if failed {
                    // stop handing out further seeds
                    next.store(plan.seeds.len(), Ordering::SeqCst);
                }
            });
        }
    });

    let mut runs = Vec::with_capacity(plan.seeds.len());
    for r in results.into_inner().expect("results lock") {
        match r {
            Some(Ok(s)) => runs.push(s),
            Some(Err(e)) => return Err(e),
            None => return Err(Error::Config("a seed was not run".into())),
        }
    }

    let hash = plan.config.hash();
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        config_hash: hash.clone(),
        seeds: plan.seeds.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: plan.config.clone(),
    };
    let summary = ExperimentSummary::from_runs(hash, plan.config.epsilon, &prep.oracle, runs);
    for (name, text) in [
        ("manifest.json", serde_json::to_string_pretty(&manifest)?),
        ("summary.json", serde_json::to_string_pretty(&summary)?),
    ] {
        let path = plan.out_dir.join(name);
        cleanup.track(path.clone());
        let mut f = fs::File::create(&path)?;
        f.write_all(text.as_bytes())?;
    }
    cleanup.armed = false;
    Ok(summary)
}
