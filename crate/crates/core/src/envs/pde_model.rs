use rand::Rng as _;
use serde::Deserialize;

use super::{clip_action, Environment, StepResult};
use crate::error::{Error, Result};
use crate::fields::{l2, l2_norm, laplacian, ScalarField2D};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeModelConfig {
    pub side: usize,
    pub dt: f64,
    pub ds: f64,
    pub substeps: usize,
    pub steps_per_episode: usize,
}

impl Default for PdeModelConfig {
    fn default() -> Self {
        Self {
            side: 6,
            dt: 0.001,
            ds: 0.1,
            substeps: 100,
            steps_per_episode: 40,
        }
    }
}

/// Controlled 2D heat equation integrated with an explicit FDTD scheme.
///
/// Each agent step holds the action fixed for `substeps` updates of
/// `x <- x + dt * (laplacian(x) + a)`.
#[derive(Debug, Clone)]
pub struct PdeModelEnv {
    config: PdeModelConfig,
    state: ScalarField2D,
    step_count: usize,
    clipped: u64,
    rng: Rng,
}

impl PdeModelEnv {
    pub fn new(config: PdeModelConfig, rng: Rng) -> Result<Self> {
        if config.substeps == 0 || config.steps_per_episode == 0 {
            return Err(Error::Config("substeps and steps_per_episode must be >= 1".into()));
        }
        if !(config.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", config.dt)));
        }
        let state = ScalarField2D::zeros(config.side, config.ds)?;
        Ok(Self {
            config,
            state,
            step_count: 0,
            clipped: 0,
            rng,
        })
    }

    pub fn config(&self) -> &PdeModelConfig {
        &self.config
    }

    /// Replaces the state without touching the step counter.
    pub fn set_state(&mut self, state: ScalarField2D) -> Result<()> {
        if state.side() != self.config.side {
            return Err(Error::Dimension("state side does not match env".into()));
        }
        self.state = state;
        Ok(())
    }

    pub fn step_field(&mut self, action: &ScalarField2D) -> Result<StepResult> {
        self.step(action.values())
    }

    fn integrate(&self, action: &[f64]) -> Result<ScalarField2D> {
        let dt = self.config.dt;
        let blow_up = |e: Error| Error::BlowUp {
            step: self.step_count,
            reason: e.to_string(),
        };
        let mut x = self.state.clone();
        for _ in 0..self.config.substeps {
            let lap = laplacian(&x).map_err(blow_up)?;
            for ((xv, lv), av) in x.values_mut().iter_mut().zip(lap.values()).zip(action) {
                *xv += dt * (lv + av);
            }
            x.check_finite().map_err(blow_up)?;
        }
        Ok(x)
    }
}

/// `-||x_next|| / d - ||a|| / d` with `d` the grid side length.
pub fn pde_model_reward(next_state: &ScalarField2D, action: &[f64]) -> f64 {
    let d = next_state.side() as f64;
    -l2_norm(next_state) / d - l2(action) / d
}

impl Environment for PdeModelEnv {
    fn reset(&mut self) -> ScalarField2D {
        let d = self.config.side;
        let values: Vec<f64> = (0..d * d).map(|_| self.rng.gen::<f64>()).collect();
        self.state = ScalarField2D::from_vec(d, self.config.ds, values)
            .expect("uniform draws are finite");
        self.step_count = 0;
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let d = self.config.side;
        if action.len() != d * d {
            return Err(Error::Dimension(format!(
                "action has {} entries, expected {}",
                action.len(),
                d * d
            )));
        }
        if self.step_count >= self.config.steps_per_episode {
            return Err(Error::Contract("step called after episode end".into()));
        }
        let mut a = action.to_vec();
        self.clipped += clip_action(&mut a, -1.0, 1.0);
        let next = self.integrate(&a)?;
        self.state = next;
        self.step_count += 1;
        Ok(StepResult {
            reward: pde_model_reward(&self.state, &a),
            next_state: self.state.clone(),
            done: self.step_count >= self.config.steps_per_episode,
        })
    }

    fn state(&self) -> &ScalarField2D {
        &self.state
    }

    fn executable_dim(&self) -> usize {
        self.config.side * self.config.side
    }

    fn action_bounds(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn steps_per_episode(&self) -> usize {
        self.config.steps_per_episode
    }

    fn clipped_entries(&self) -> u64 {
        self.clipped
    }
}
