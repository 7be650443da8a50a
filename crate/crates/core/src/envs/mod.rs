//! The two PDE-control environments.
//!
//! Both expose a gridded temperature state and accept a flat executable
//! action vector. Episodes have a fixed horizon.

mod heat_invader;
mod pde_model;

pub use heat_invader::{
    airflow_field, fan_trigger, heat_invader_reward, Airflow, HeatInvaderConfig, HeatInvaderEnv,
    AC_COLS, AC_ROWS, EXECUTABLE_DIM,
};
pub use pde_model::{pde_model_reward, PdeModelConfig, PdeModelEnv};

use crate::error::Result;
use crate::fields::ScalarField2D;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: ScalarField2D,
    pub reward: f64,
    pub done: bool,
}

/// Common reset/step surface used by the training loop.
pub trait Environment {
    fn reset(&mut self) -> ScalarField2D;

    /// Advances one agent step. Out-of-range action entries are clipped.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    fn state(&self) -> &ScalarField2D;

    /// Length of the executable action vector.
    fn executable_dim(&self) -> usize;

    /// Per-entry bounds of the executable action.
    fn action_bounds(&self) -> (f64, f64);

    fn steps_per_episode(&self) -> usize;

    /// Number of action entries clipped since construction.
    fn clipped_entries(&self) -> u64;
}

/// Clips in place and returns how many entries were out of range.
pub(crate) fn clip_action(action: &mut [f64], lo: f64, hi: f64) -> u64 {
    let mut n = 0;
    for a in action.iter_mut() {
        if *a < lo || *a > hi || a.is_nan() {
            n += 1;
            *a = if a.is_nan() { 0.0f64.clamp(lo, hi) } else { a.clamp(lo, hi) };
        }
    }
    n
}
