//! Experiment orchestration: configuration, seeded multi-run training,
//! learning-rate sweeps, aggregation and plotting.

mod aggregate;
mod config;
mod plot;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use aggregate::{
    aggregate, curves_from_csv, curves_to_csv, evaluate_runs, evaluate_window, mean_stderr,
    AggregateCurve, EvalWindow,
};
pub use config::{Config, NetworkSection, NoiseMode, SweepSection, TrainSection, REFERENCE_CONFIG};
pub use plot::{render_curves, svg_chart};

use crate::adapters::{make_descriptors, Adapter, DescriptorDomain, DescriptorSet};
use crate::ddpg::{ActorKind, RunLog, TrainConfig, Trainer};
use crate::envs::{Airflow, Environment, HeatInvaderEnv, PdeModelEnv};
use crate::error::{Error, Result};
use crate::nn::{Activation, Network};
use crate::rng::{stream, STREAM_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    PdeModel,
    HeatInvader,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::PdeModel => "pde-model",
            Domain::HeatInvader => "heat-invader",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "pde-model" | "pde_model" => Ok(Domain::PdeModel),
            "heat-invader" | "heat_invader" => Ok(Domain::HeatInvader),
            _ => Err(Error::Config(format!("unknown domain {s:?}"))),
        }
    }
}

/// One learning-rate cell: `critic_lr = actor_lr * multiplier`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub actor_lr: f64,
    pub multiplier: f64,
}

impl Cell {
    pub fn critic_lr(&self) -> f64 {
        self.actor_lr * self.multiplier
    }

    pub fn name(&self) -> String {
        format!("alr{:e}_m{}", self.actor_lr, self.multiplier)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub domain: Domain,
    pub variant: ActorKind,
    pub k: usize,
    /// PDE model grid side; ignored for the Heat Invader.
    pub d: usize,
    pub airflow: Airflow,
    pub episodes: usize,
    pub runs: usize,
    pub base_seed: u64,
    pub config: Config,
}

impl ExperimentSpec {
    pub fn new(domain: Domain, variant: ActorKind, config: Config) -> Self {
        let d = config.pde_model.side;
        Self {
            domain,
            variant,
            k: match domain {
                Domain::PdeModel => d * d,
                Domain::HeatInvader => 50,
            },
            d,
            airflow: config.heat_invader.airflow,
            episodes: 200,
            runs: 1,
            base_seed: 0,
            config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.episodes == 0 {
            return Err(Error::Config("runs and episodes must be positive".into()));
        }
        self.descriptors().map(|_| ())
    }

    pub fn descriptors(&self) -> Result<DescriptorSet> {
        match self.domain {
            Domain::PdeModel => make_descriptors(DescriptorDomain::PdeModel, self.k),
            Domain::HeatInvader => make_descriptors(DescriptorDomain::HeatInvader, self.k),
        }
    }

    /// The config's own learning-rate cell.
    pub fn default_cell(&self) -> Cell {
        Cell {
            actor_lr: self.config.train.actor_lr,
            multiplier: self.config.train.critic_multiplier,
        }
    }

    pub fn grid(&self) -> Vec<Cell> {
        self.config
            .grid()
            .into_iter()
            .map(|(actor_lr, multiplier)| Cell { actor_lr, multiplier })
            .collect()
    }

    pub fn seed(&self, run: usize) -> u64 {
        self.base_seed + run as u64
    }

    pub fn train_config(&self, cell: Cell, run: usize) -> TrainConfig {
        let t = &self.config.train;
        let net = &self.config.network;
        TrainConfig {
            gamma: t.gamma,
            tau: t.tau,
            actor_lr: cell.actor_lr,
            critic_lr: cell.critic_lr(),
            critic_decay: t.critic_decay,
            batch_size: t.batch_size,
            episodes: self.episodes,
            buffer_capacity: t.buffer_capacity,
            noise: self.config.noise_schedule(self.episodes),
            seed: self.seed(run),
            actor_hidden: net.actor_hidden.clone(),
            critic_hidden: net.critic_hidden.clone(),
            actor_output: match self.domain {
                Domain::PdeModel => Activation::Tanh,
                Domain::HeatInvader => Activation::Sigmoid,
            },
            observation_side: match self.domain {
                Domain::PdeModel => None,
                Domain::HeatInvader => Some(net.heat_invader_observation),
            },
        }
    }

    /// Trains run `run` of `cell`. With `checkpoints`, the final networks
    /// are saved under `checkpoints/run{run}/`.
    pub fn run_one(&self, cell: Cell, run: usize, checkpoints: Option<&Path>) -> Result<RunLog> {
        let c = self.descriptors()?;
        let tc = self.train_config(cell, run);
        let env_rng = stream(tc.seed, STREAM_ENV);
        match self.domain {
            Domain::PdeModel => {
                let mut ec = self.config.pde_model.clone();
                ec.side = self.d;
                let adapter = Adapter::pde_grid(&c, self.d)?;
                let env = PdeModelEnv::new(ec, env_rng)?;
                finish(Trainer::new(env, self.variant, c, adapter, tc, run)?, run, checkpoints)
            }
            Domain::HeatInvader => {
                let mut ec = self.config.heat_invader.clone();
                ec.airflow = self.airflow;
                let env = HeatInvaderEnv::new(ec, env_rng)?;
                finish(Trainer::new(env, self.variant, c, Adapter::Repeat, tc, run)?, run, checkpoints)
            }
        }
    }

    /// All runs of one cell, in run order, trained in parallel.
    pub fn run_cell(&self, cell: Cell, checkpoints: Option<&Path>) -> Result<Vec<RunLog>> {
        self.validate()?;
        (0..self.runs)
            .into_par_iter()
            .map(|run| self.run_one(cell, run, checkpoints))
            .collect()
    }

    pub fn window(&self) -> EvalWindow {
        EvalWindow::scaled(self.domain, self.episodes)
    }
}

fn finish<E: Environment>(mut t: Trainer<E>, run: usize, checkpoints: Option<&Path>) -> Result<RunLog> {
    let log = t.run()?;
    if let Some(dir) = checkpoints {
        let dir = dir.join(format!("run{run}"));
        std::fs::create_dir_all(&dir)?;
        for (i, net) in t.actor().networks().into_iter().enumerate() {
            net.save(&dir.join(format!("actor{i}.net")))?;
        }
        t.critic().save(&dir.join("critic.net"))?;
    }
    Ok(log)
}

/// Reloads the networks written by [`ExperimentSpec::run_one`].
pub fn load_checkpoints(dir: &Path) -> Result<(Vec<Network>, Network)> {
    let mut actors = Vec::new();
    while let Ok(net) = Network::load(&dir.join(format!("actor{}.net", actors.len()))) {
        actors.push(net);
    }
    Ok((actors, Network::load(&dir.join("critic.net"))?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub logs: Vec<RunLog>,
    pub curve: AggregateCurve,
    pub evaluate: f64,
    pub evaluate_stderr: f64,
    pub aborts: usize,
}

impl CellResult {
    pub fn from_logs(cell: Cell, logs: Vec<RunLog>, window: EvalWindow) -> Result<Self> {
        let curve = aggregate(&logs)?;
        let evaluate = window.sum(&curve.mean)?;
        let (_, evaluate_stderr) = evaluate_runs(&logs, window)?;
        let aborts = logs.iter().map(|l| l.total_aborts()).sum();
        Ok(Self {
            cell,
            logs,
            curve,
            evaluate,
            evaluate_stderr,
            aborts,
        })
    }

    /// Every run hit at least one blow-up.
    pub fn failed(&self) -> bool {
        self.logs.iter().all(|l| l.total_aborts() > 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub best: usize,
}

impl SweepResult {
    pub fn best(&self) -> &CellResult {
        &self.cells[self.best]
    }
}

/// Index of the highest Evaluate among cells that did not fail; on ties the
/// earliest cell wins.
pub fn select_best(cells: &[CellResult]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if c.failed() {
            continue;
        }
        if best.is_none_or(|b| c.evaluate > cells[b].evaluate) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| {
        let detail: Vec<String> = cells
            .iter()
            .map(|c| format!("{}: {} aborts", c.cell.name(), c.aborts))
            .collect();
        Error::Sweep(format!("every cell aborted ({})", detail.join(", ")))
    })
}

/// Runs every `(cell, run)` pair on the worker pool, then aggregates per cell
/// in grid order. Cells are sorted lexicographically by
/// `(actor_lr, multiplier)` first.
pub fn sweep(spec: &ExperimentSpec, grid: &[Cell]) -> Result<SweepResult> {
    spec.validate()?;
    if grid.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| {
        a.actor_lr
            .total_cmp(&b.actor_lr)
            .then(a.multiplier.total_cmp(&b.multiplier))
    });
    for cell in &grid {
        if cell.multiplier < 1.0 || cell.actor_lr < 0.0 {
            return Err(Error::Config(format!("invalid cell {}", cell.name())));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..spec.runs).map(move |r| (c, r)))
        .collect();
    let mut logs = jobs
        .par_iter()
        .map(|&(c, r)| spec.run_one(grid[c], r, None))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let window = spec.window();
    let cells = grid
        .iter()
        .map(|&cell| CellResult::from_logs(cell, logs.by_ref().take(spec.runs).collect(), window))
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&cells)?;
    Ok(SweepResult { cells, best })
}

/// Writes `runs.csv`, `curve.csv`, `descriptors.txt` and `label.txt`.
pub fn write_run_dir(dir: &Path, label: &str, logs: &[RunLog], c: &DescriptorSet) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("runs.csv"), RunLog::to_csv(logs)?)?;
    std::fs::write(
        dir.join("curve.csv"),
        curves_to_csv(&[(label.to_string(), aggregate(logs)?)])?,
    )?;
    std::fs::write(dir.join("descriptors.txt"), c.to_text())?;
    std::fs::write(dir.join("label.txt"), format!("{label}\n"))?;
    Ok(())
}

/// One subdirectory per cell plus `summary.csv`.
pub fn write_sweep_dir(dir: &Path, spec: &ExperimentSpec, result: &SweepResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let c = spec.descriptors()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "actor_lr",
        "multiplier",
        "critic_lr",
        "evaluate",
        "evaluate_stderr",
        "aborts",
        "best",
    ])
    .map_err(|e| Error::Parse(e.to_string()))?;
    for (i, cell) in result.cells.iter().enumerate() {
        write_run_dir(&dir.join(cell.cell.name()), &cell.cell.name(), &cell.logs, &c)?;
        w.write_record([
            cell.cell.actor_lr.to_string(),
            cell.cell.multiplier.to_string(),
            cell.cell.critic_lr().to_string(),
            cell.evaluate.to_string(),
            cell.evaluate_stderr.to_string(),
            cell.aborts.to_string(),
            u8::from(i == result.best).to_string(),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(dir.join("summary.csv"), bytes)?;
    Ok(())
}

/// Run directories under `dir`: `dir` itself when it holds `runs.csv`,
/// otherwise its immediate subdirectories that do, sorted by name.
pub fn find_run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("runs.csv").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("runs.csv").is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Error::Config(format!("no runs.csv under {}", dir.display())));
    }
    Ok(found)
}

/// Loads and aggregates every run directory under `dir`.
pub fn load_curves(dir: &Path) -> Result<Vec<(String, AggregateCurve)>> {
    find_run_dirs(dir)?
        .into_iter()
        .map(|d| {
            let logs = RunLog::from_csv(&std::fs::read_to_string(d.join("runs.csv"))?)?;
            let label = std::fs::read_to_string(d.join("label.txt"))
                .map(|s| s.trim().to_string())
                .unwrap_or_else(|_| {
                    d.file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default()
                });
            Ok((label, aggregate(&logs)?))
        })
        .collect()
}
