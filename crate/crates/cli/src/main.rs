mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use config::{ExperimentConfig, Manifest, RunRecord};
use noisy_rm::abstraction::AbstractionModel;
use noisy_rm::envs::gold::{gold_pomdp, random_episodes, GoldLabeller, DEFAULT_HORIZON};
use noisy_rm::inference::{ExactFilterModel, InferenceMethod};
use noisy_rm::learner::{train_run, GoldTask};
use noisy_rm::metrics::{
    score_episodes, write_belief_csv, write_curve_csv, write_report, BeliefAccuracyReport,
};
use noisy_rm::product::build_product;
use noisy_rm::rm::{PropSet, RewardMachine, RmStateId};

#[derive(Parser)]
#[command(
    name = "noisy-rm",
    version,
    about = "Reward machines under noisy symbol grounding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train Q-learning agents and write one learning curve per run.
    Run(RunArgs),
    /// Parse and validate a reward machine file.
    Validate { file: PathBuf },
    /// Score RM-state inference on random-action episodes.
    Infer(InferArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config or a previous run's manifest.json.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// oracle, memory, naive, ibu or tdm. Repeatable.
    #[arg(long = "method")]
    methods: Vec<String>,
    /// Repeatable.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long, env = "NOISY_RM_OUT")]
    out: Option<PathBuf>,
    /// Total training steps per run.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Runs executed concurrently.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InferChoice {
    Naive,
    Ibu,
    Tdm,
    Exact,
    All,
}

#[derive(clap::Args)]
struct InferArgs {
    rm: PathBuf,
    #[arg(long, default_value = "gold")]
    env: String,
    #[arg(long, value_enum, default_value = "all")]
    method: InferChoice,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, env = "NOISY_RM_OUT")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { file } => cmd_validate(&file),
        Command::Infer(args) => cmd_infer(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_out(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("results"))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(env) = args.env {
        cfg.env = env;
    }
    if !args.methods.is_empty() {
        cfg.methods = args.methods;
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds;
    }
    if let Some(steps) = args.steps {
        cfg.total_steps = steps;
    }
    if let Some(every) = args.eval_every {
        cfg.eval_every = every;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    // The flag (or NOISY_RM_OUT) wins over the file.
    let out = resolve_out(args.out.or_else(|| cfg.out.clone()));
    cfg.out = Some(out.clone());
    let methods = cfg.check()?;

    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let jobs: Vec<_> = methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()?;
    let task = GoldTask::new();
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(method, seed)| -> Result<RunRecord> {
                let (curve, _) = train_run(&task, method, &cfg.train_config(seed))?;
                let file = format!("{}_{}_seed{}.csv", cfg.env, method, seed);
                write_curve_csv(&curve, &out.join(&file))?;
                eprintln!(
                    "{file}: final return {:.3}",
                    curve.points.last().map_or(0.0, |p| p.ret)
                );
                Ok(RunRecord {
                    method: method.to_string(),
                    seed,
                    file,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg,
        runs,
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {} runs and {}", manifest.runs.len(), path.display());
    Ok(())
}

fn load_rm(path: &Path) -> Result<RewardMachine> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    RewardMachine::from_text(&text)
        .with_context(|| format!("{} is not a valid reward machine", path.display()))
}

fn cmd_validate(path: &Path) -> Result<()> {
    let rm = load_rm(path)?;
    let n_sigma = 1usize << rm.n_props();
    let moving = (0..rm.n_nonterminal())
        .flat_map(|u| (0..n_sigma).map(move |s| (u, s)))
        .filter(|&(u, s)| {
            rm.step(RmStateId(u), PropSet::from_bits(s as u32))
                .unwrap()
                .0
                != RmStateId(u)
        })
        .count();
    println!("{}: ok", path.display());
    println!("  propositions: {} ({})", rm.n_props(), rm.aps().join(", "));
    println!(
        "  states: {} ({} non-terminal, {} terminal), initial {}",
        rm.n_states(),
        rm.n_nonterminal(),
        rm.n_states() - rm.n_nonterminal(),
        rm.state_name(rm.initial())
    );
    println!(
        "  edges: {} declared, {} including default self-loops",
        rm.user_edges().len(),
        rm.edges().len()
    );
    println!(
        "  table: {} states x {} assignments, {} leave their state",
        rm.n_nonterminal(),
        n_sigma,
        moving
    );
    Ok(())
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    if args.env != "gold" {
        bail!("unknown env `{}` (expected: gold)", args.env);
    }
    let rm = load_rm(&args.rm)?;
    let task = GoldTask::with_rm(rm)?;
    let rm = task.rm.clone();
    let out = resolve_out(args.out);

    let mut setups: Vec<(&str, InferenceMethod, AbstractionModel)> = Vec::new();
    let wanted = |c: InferChoice| args.method == c || args.method == InferChoice::All;
    if wanted(InferChoice::Naive) {
        setups.push(("naive", InferenceMethod::Naive, task.models.naive.clone()));
    }
    if wanted(InferChoice::Ibu) {
        setups.push(("ibu", InferenceMethod::Ibu, task.models.ibu.clone()));
    }
    if wanted(InferChoice::Tdm) {
        setups.push(("tdm", InferenceMethod::Tdm, task.models.tdm.clone()));
    }
    if wanted(InferChoice::Exact) {
        let label = GoldLabeller::for_rm(&rm)?;
        let product = build_product(&gold_pomdp(), &rm, &label)?;
        setups.push((
            "exact",
            InferenceMethod::Tdm,
            AbstractionModel::RmBelief(Arc::new(ExactFilterModel::new(Arc::new(product)))),
        ));
    }

    let episodes = random_episodes(&rm, args.episodes, args.horizon, args.seed)?;
    let mut report = BeliefAccuracyReport::default();
    let mut traces = Vec::new();
    for (name, method, model) in &setups {
        let (row, rows) = score_episodes(name, *method, model, &rm, &episodes)?;
        report.rows.push(row);
        traces.push((*name, rows));
    }

    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let prefix = format!("{}_seed{}", args.env, args.seed);
    let rows = traces
        .iter()
        .flat_map(|(name, rows)| rows.iter().map(move |r| (*name, r)));
    write_belief_csv(&rm, rows, &out.join(format!("{prefix}_beliefs.csv")))?;
    write_report(&report, &out.join(format!("{prefix}_report.csv")))?;
    println!("method,mean_loglik,n_predictions,n_floored");
    for r in &report.rows {
        println!(
            "{},{:.6},{},{}",
            r.method, r.mean_loglik, r.n_predictions, r.n_floored
        );
    }
    Ok(())
}
