use std::path::Path;

use serde::Deserialize;

use crate::ddpg::NoiseSchedule;
use crate::envs::{HeatInvaderConfig, PdeModelConfig};
use crate::error::{Error, Result};

/// The checked-in reference configuration. Every default lives here.
pub const REFERENCE_CONFIG: &str = include_str!("../../config/reference.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Variance `1 / episode`.
    Decaying,
    /// Variance `1 / episodes` for the whole run.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub gamma: f64,
    pub tau: f64,
    pub critic_decay: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub noise: NoiseMode,
    pub actor_lr: f64,
    pub critic_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Grid side the Heat Invader state is downsampled to before it reaches
    /// the networks.
    pub heat_invader_observation: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub actor_lrs: Vec<f64>,
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub train: TrainSection,
    pub network: NetworkSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub pde_model: PdeModelConfig,
    #[serde(default)]
    pub heat_invader: HeatInvaderConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self::parse(REFERENCE_CONFIG).expect("reference config parses")
    }
}

impl Config {
    /// Parses a complete config. Missing `[train]`, `[network]` or `[sweep]`
    /// keys are an error; use [`Config::overlay`] for partial files.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `text` on top of the reference config, so a file only needs
    /// the keys it changes.
    pub fn overlay(text: &str) -> Result<Self> {
        let mut base: toml::Table =
            toml::from_str(REFERENCE_CONFIG).map_err(|e| Error::Config(e.to_string()))?;
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (section, value) in user {
            match (base.get_mut(&section), value) {
                (Some(toml::Value::Table(b)), toml::Value::Table(u)) => b.extend(u),
                (_, v) => {
                    base.insert(section, v);
                }
            }
        }
        toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::overlay(&std::fs::read_to_string(path)?)
    }

    pub fn noise_schedule(&self, episodes: usize) -> NoiseSchedule {
        match self.train.noise {
            NoiseMode::Decaying => NoiseSchedule::Decaying,
            NoiseMode::Constant => NoiseSchedule::Constant(1.0 / episodes.max(1) as f64),
        }
    }

    /// `(actor_lr, multiplier)` pairs in lexicographic order.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        let mut lrs = self.sweep.actor_lrs.clone();
        let mut ms = self.sweep.multipliers.clone();
        lrs.sort_by(f64::total_cmp);
        ms.sort_by(f64::total_cmp);
        lrs.iter()
            .flat_map(|&a| ms.iter().map(move |&m| (a, m)))
            .collect()
    }
}
