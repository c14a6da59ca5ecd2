use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mtfair::config::{read_env_config, save_env_config, EnvConfig, ENV_FORMAT_VERSION};
use mtfair::envs::RiverSwimSpec;
use mtfair::harness::{run_experiment, ExperimentPlan, RunConfig};
use mtfair::learner::{Algorithm, SamplingSchedule};
use mtfair::planner::UnreachedRows;
use mtfair::rewards::AlphaVariant;
use mtfair::Error;

#[derive(Parser, Debug)]
#[command(name = "mtfair", version, about = "Group-fair multi-task RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the learner for several seeds and write CSV logs.
    Run(RunArgs),
    /// Write the default two-group RiverSwim config.
    WriteEnv {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        horizon: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Algo {
    Multitask,
    Baseline,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Alpha {
    /// Bonus scale shared by all tasks.
    #[value(name = "s33", alias = "standard")]
    Standard,
    /// Bonus scale multiplied by the squared task count.
    #[value(name = "lemmaA2", alias = "task-scaled")]
    TaskScaled,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Schedule {
    AllGroups,
    RoundRobin,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Unreached {
    Safe,
    Uniform,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Environment config (JSON).
    #[arg(long)]
    env: PathBuf,
    #[arg(long, value_enum, default_value = "multitask")]
    algo: Algo,
    /// Task (0-based) the baseline constrains and optimizes.
    #[arg(long, default_value_t = 0)]
    baseline_task: usize,
    #[arg(long)]
    episodes: usize,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    epsilon0: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Write every solved program in MPS format under <out>/lp/.
    #[arg(long)]
    dump_lp: bool,
    #[arg(long, value_enum, default_value = "s33")]
    alpha_variant: Alpha,
    /// Multiplier on every confidence radius (1 = plain radius).
    #[arg(long, default_value_t = 1.0)]
    radius_scale: f64,
    #[arg(long, value_enum, default_value = "all-groups")]
    schedule: Schedule,
    /// Policy rows the program leaves without occupancy: uniform, or copy the safe policy.
    #[arg(long, value_enum, default_value = "uniform")]
    unreached: Unreached,
}

fn run(args: RunArgs) -> Result<(), Error> {
    // an unreadable --env path is a bad argument, not a runtime failure
    let env = read_env_config(&args.env).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", args.env.display())),
        other => other,
    })?;
    let algorithm = match args.algo {
        Algo::Multitask => Algorithm::MultiTask,
        Algo::Baseline => Algorithm::Baseline {
            task: args.baseline_task,
        },
    };
    let plan = ExperimentPlan {
        config: RunConfig {
            env,
            algorithm,
            n_episodes: args.episodes,
            epsilon: args.epsilon,
            epsilon0: args.epsilon0,
            delta: args.delta,
            radius_scale: args.radius_scale,
            alpha: match args.alpha_variant {
                Alpha::Standard => AlphaVariant::Standard,
                Alpha::TaskScaled => AlphaVariant::TaskScaled,
            },
            schedule: match args.schedule {
                Schedule::AllGroups => SamplingSchedule::AllGroups,
                Schedule::RoundRobin => SamplingSchedule::RoundRobin,
            },
            unreached: match args.unreached {
                Unreached::Safe => UnreachedRows::SafePolicy,
                Unreached::Uniform => UnreachedRows::Uniform,
            },
        },
        seeds: args.seeds,
        out_dir: args.out,
        parallel: args.parallel,
        dump_lp: args.dump_lp,
    };
    let summary = run_experiment(&plan)?;
    for q in &summary.max_gap_quantiles {
        println!(
            "task {}: max gap median {:.4}, max {:.4}, seeds above epsilon {:.2}",
            q.task, q.median, q.max, q.violating_seed_fraction
        );
    }
    println!("mean summed regret {:.3}", summary.mean_summed_regret);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::WriteEnv { out, horizon } => {
            let spec = RiverSwimSpec {
                horizon,
                ..RiverSwimSpec::default()
            };
            let cfg = EnvConfig::Riverswim {
                format_version: ENV_FORMAT_VERSION,
                horizon: spec.horizon,
                groups: spec.groups,
                initial_policy: None,
            };
            cfg.build().and_then(|_| save_env_config(&cfg, &out))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
