use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pdectrl::ddpg::{composite_gradcheck, ActorKind};
use pdectrl::envs::Airflow;
use pdectrl::harness::{
    load_curves, render_curves, sweep, write_run_dir, write_sweep_dir, Cell, Config, Domain,
    ExperimentSpec,
};
use pdectrl::nn::gradcheck;
use pdectrl::{Error, Result};

#[derive(Parser)]
#[command(name = "pdectrl", version, about = "DDPG with action descriptors for PDE control")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one learning-rate cell for several seeded runs.
    Train(TrainArgs),
    /// Train every cell of the learning-rate grid and pick the best.
    Sweep(SweepArgs),
    /// Finite-difference check of the network and actor gradients.
    Gradcheck {
        #[arg(long, default_value_t = 60)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render curves from a train or sweep output directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_parser = ["pde-model", "heat-invader"])]
    domain: String,
    #[arg(long, value_parser = ["ddpg", "separate", "descriptor"])]
    variant: String,
    /// Number of action scalars (defaults: d*d for the PDE model, 50 for Heat Invader).
    #[arg(long)]
    k: Option<usize>,
    /// PDE model grid side.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = ["uniform", "whirl"])]
    airflow: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long)]
    actor_lr: Option<f64>,
    #[arg(long)]
    multiplier: Option<f64>,
    /// Save the final networks of every run.
    #[arg(long)]
    checkpoint: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Comma-separated actor learning rates (default: the config grid).
    #[arg(long, value_delimiter = ',')]
    actor_lrs: Vec<f64>,
    /// Comma-separated critic multipliers (default: the config grid).
    #[arg(long, value_delimiter = ',')]
    multipliers: Vec<f64>,
}

fn build_spec(args: &ExperimentArgs) -> Result<ExperimentSpec> {
    let config = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let domain = Domain::from_name(&args.domain)?;
    let mut spec = ExperimentSpec::new(domain, ActorKind::from_name(&args.variant)?, config);
    if let Some(d) = args.d {
        spec.d = d;
        if domain == Domain::PdeModel {
            spec.k = d * d;
        }
    }
    if let Some(k) = args.k {
        spec.k = k;
    }
    if let Some(a) = &args.airflow {
        spec.airflow = match a.as_str() {
            "whirl" => Airflow::Whirl,
            _ => Airflow::Uniform,
        };
    }
    spec.episodes = args.episodes;
    spec.runs = args.runs;
    spec.base_seed = args.seed;
    spec.validate()?;
    Ok(spec)
}

fn train(args: &TrainArgs) -> Result<()> {
    let spec = build_spec(&args.exp)?;
    let mut cell = spec.default_cell();
    if let Some(lr) = args.actor_lr {
        cell.actor_lr = lr;
    }
    if let Some(m) = args.multiplier {
        cell.multiplier = m;
    }
    let ckpt = args.checkpoint.then(|| args.exp.out.join("checkpoints"));
    let logs = spec.run_cell(cell, ckpt.as_deref())?;
    write_run_dir(&args.exp.out, spec.variant.name(), &logs, &spec.descriptors()?)?;
    let (eval, se) = pdectrl::harness::evaluate_runs(&logs, spec.window())?;
    println!(
        "{} {} k={} cell {}: evaluate {eval:.6} +- {se:.6} over {} runs",
        spec.domain.name(),
        spec.variant.name(),
        spec.k,
        cell.name(),
        spec.runs
    );
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let mut spec = build_spec(&args.exp)?;
    if !args.actor_lrs.is_empty() {
        spec.config.sweep.actor_lrs = args.actor_lrs.clone();
    }
    if !args.multipliers.is_empty() {
        spec.config.sweep.multipliers = args.multipliers.clone();
    }
    let grid: Vec<Cell> = spec.grid();
    let result = sweep(&spec, &grid)?;
    write_sweep_dir(&args.exp.out, &spec, &result)?;
    for (i, c) in result.cells.iter().enumerate() {
        println!(
            "{:<20} evaluate {:>12.6} +- {:.6}{}",
            c.cell.name(),
            c.evaluate,
            c.evaluate_stderr,
            if i == result.best { "  best" } else { "" }
        );
    }
    Ok(())
}

fn run_gradcheck(cases: usize, seed: u64) -> Result<()> {
    let mut reports = gradcheck::network_suite(cases, seed)?;
    for kind in ActorKind::ALL {
        reports.push(composite_gradcheck(kind, seed)?);
    }
    let mut failed = 0;
    for r in &reports {
        println!(
            "{} {:<48} params {:.2e} input {:.2e} aux {:.2e}",
            if r.passed() { "ok  " } else { "FAIL" },
            r.label,
            r.params,
            r.input,
            r.aux
        );
        failed += usize::from(!r.passed());
    }
    println!("{} of {} checks passed", reports.len() - failed, reports.len());
    if failed > 0 {
        return Err(Error::Contract(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn plot(input: &Path, out: &Path) -> Result<()> {
    let curves = load_curves(input)?;
    render_curves(&curves, out)?;
    println!("wrote {} curves to {}", curves.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Gradcheck { cases, seed } => run_gradcheck(*cases, *seed),
        Command::Plot { input, out } => plot(input, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
