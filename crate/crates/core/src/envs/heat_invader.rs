use rand::Rng as _;
use serde::Deserialize;

use super::{clip_action, Environment, StepResult};
use crate::error::{Error, Result};
use crate::fields::{advect, l2, laplacian, ScalarField2D, VelocityField2D};
use crate::rng::Rng;

/// Executable layout: `AC_ROWS` rows of `AC_COLS` conditioners.
pub const AC_ROWS: usize = 4;
pub const AC_COLS: usize = 50;
pub const EXECUTABLE_DIM: usize = AC_ROWS * AC_COLS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Airflow {
    Uniform,
    Whirl,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatInvaderConfig {
    pub side: usize,
    /// Diffusivity `1/Pe`.
    pub inv_peclet: f64,
    /// Physical time covered by one agent step.
    pub dt_agent: f64,
    pub airflow: Airflow,
    pub uniform_speed: f64,
    pub whirl_rate: f64,
    pub invader_amplitude: f64,
    pub invader_width: f64,
    /// Inclusive 1-based range the invader's row and column are drawn from.
    pub invader_min: usize,
    pub invader_max: usize,
    pub fan_threshold: f64,
    pub t_star: f64,
    /// First (0-based) grid row hosting the conditioners.
    pub ac_first_row: usize,
    pub steps_per_episode: usize,
}

impl Default for HeatInvaderConfig {
    fn default() -> Self {
        Self {
            side: 50,
            inv_peclet: 0.05,
            dt_agent: 0.1,
            airflow: Airflow::Uniform,
            uniform_speed: 0.2,
            whirl_rate: 0.4,
            invader_amplitude: 1.0,
            invader_width: 0.08,
            invader_min: 45,
            invader_max: 50,
            fan_threshold: 25.0,
            t_star: 0.501,
            ac_first_row: 23,
            steps_per_episode: 40,
        }
    }
}

/// `(left_on, right_on)`: a fan runs when the absolute action mass on its
/// half of the room strictly exceeds the threshold.
pub fn fan_trigger(action: &[f64], threshold: f64) -> (bool, bool) {
    let half = AC_COLS / 2;
    let (mut left, mut right) = (0.0, 0.0);
    for row in action.chunks(AC_COLS) {
        left += row[..half].iter().map(|a| a.abs()).sum::<f64>();
        right += row[half..].iter().map(|a| a.abs()).sum::<f64>();
    }
    (left > threshold, right > threshold)
}

/// Velocity field produced by the wall fans.
///
/// Uniform mode blows inward from each active fan's wall over its half of the
/// room. Whirl mode is a solid-body rotation about the room centre whenever
/// any fan runs.
pub fn airflow_field(
    side: usize,
    mode: Airflow,
    left_on: bool,
    right_on: bool,
    uniform_speed: f64,
    whirl_rate: f64,
) -> VelocityField2D {
    let n = side * side;
    let mut vx = vec![0.0; n];
    let mut vy = vec![0.0; n];
    match mode {
        Airflow::Uniform => {
            let half = side / 2;
            for i in 0..side {
                for j in 0..side {
                    if j < half && left_on {
                        vx[i * side + j] = uniform_speed;
                    } else if j >= half && right_on {
                        vx[i * side + j] = -uniform_speed;
                    }
                }
            }
        }
        Airflow::Whirl if left_on || right_on => {
            let h = 1.0 / side as f64;
            for i in 0..side {
                let y = (i as f64 + 0.5) * h - 0.5;
                for j in 0..side {
                    let x = (j as f64 + 0.5) * h - 0.5;
                    vx[i * side + j] = -whirl_rate * y;
                    vy[i * side + j] = whirl_rate * x;
                }
            }
        }
        Airflow::Whirl => {}
    }
    VelocityField2D::new(side, vx, vy).expect("shape is side x side")
}

/// `-(1/N) * #{z : |T(z)| > t_star} - ||a|| / dim(a)`.
pub fn heat_invader_reward(next_state: &ScalarField2D, action: &[f64], t_star: f64) -> f64 {
    let cells = next_state.values().len() as f64;
    let hot = next_state.values().iter().filter(|t| t.abs() > t_star).count() as f64;
    -hot / cells - l2(action) / action.len() as f64
}

/// Convection-diffusion room with an uncontrolled heat source and
/// floor-mounted conditioners.
#[derive(Debug, Clone)]
pub struct HeatInvaderEnv {
    config: HeatInvaderConfig,
    state: ScalarField2D,
    invader: (usize, usize),
    source: Vec<f64>,
    fans: (bool, bool),
    step_count: usize,
    clipped: u64,
    rng: Rng,
}

impl HeatInvaderEnv {
    pub fn new(config: HeatInvaderConfig, rng: Rng) -> Result<Self> {
        if config.ac_first_row + AC_ROWS > config.side || config.side != AC_COLS {
            return Err(Error::Config(format!(
                "conditioner rows {}..{} do not fit a {} grid with {AC_COLS} columns",
                config.ac_first_row,
                config.ac_first_row + AC_ROWS,
                config.side
            )));
        }
        if config.invader_min < 1
            || config.invader_min > config.invader_max
            || config.invader_max > config.side
        {
            return Err(Error::Config("invader range must lie within 1..=side".into()));
        }
        if !(config.inv_peclet >= 0.0 && config.dt_agent > 0.0 && config.invader_width > 0.0) {
            return Err(Error::Config("diffusivity, dt_agent and width must be positive".into()));
        }
        let spacing = 1.0 / config.side as f64;
        let state = ScalarField2D::zeros(config.side, spacing)?;
        let n = config.side * config.side;
        Ok(Self {
            config,
            state,
            invader: (0, 0),
            source: vec![0.0; n],
            fans: (false, false),
            step_count: 0,
            clipped: 0,
            rng,
        })
    }

    pub fn config(&self) -> &HeatInvaderConfig {
        &self.config
    }

    /// 1-based grid position of the invader.
    pub fn invader(&self) -> (usize, usize) {
        self.invader
    }

    pub fn fans(&self) -> (bool, bool) {
        self.fans
    }

    pub fn set_state(&mut self, state: ScalarField2D) -> Result<()> {
        if state.side() != self.config.side {
            return Err(Error::Dimension("state side does not match env".into()));
        }
        self.state = state;
        Ok(())
    }

    /// Places the invader at a 1-based grid position and rebuilds its source.
    pub fn place_invader(&mut self, row: usize, col: usize) {
        self.invader = (row, col);
        let d = self.config.side;
        let h = 1.0 / d as f64;
        let (cy, cx) = ((row as f64 - 0.5) * h, (col as f64 - 0.5) * h);
        let two_w2 = 2.0 * self.config.invader_width * self.config.invader_width;
        for i in 0..d {
            let y = (i as f64 + 0.5) * h;
            for j in 0..d {
                let x = (j as f64 + 0.5) * h;
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                self.source[i * d + j] = self.config.invader_amplitude * (-r2 / two_w2).exp();
            }
        }
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    /// Number of explicit substeps used per agent step for this velocity.
    pub fn substeps(&self, vel: &VelocityField2D) -> usize {
        let h = self.state.spacing();
        // laplacian divides by h, so the diffusion rate per cell is D/h * 4
        let rate = 4.0 * self.config.inv_peclet / h + 2.0f64.sqrt() * vel.max_speed() / h;
        let dt_stable = 0.9 / rate.max(f64::MIN_POSITIVE);
        (self.config.dt_agent / dt_stable).ceil().max(1.0) as usize
    }

    fn ac_source(&self, action: &[f64]) -> Vec<f64> {
        let d = self.config.side;
        let mut field = vec![0.0; d * d];
        for (r, row) in action.chunks(AC_COLS).enumerate() {
            let start = (self.config.ac_first_row + r) * d;
            field[start..start + AC_COLS].copy_from_slice(row);
        }
        field
    }
}

impl Environment for HeatInvaderEnv {
    fn reset(&mut self) -> ScalarField2D {
        let lo = self.config.invader_min;
        let hi = self.config.invader_max;
        let row = self.rng.gen_range(lo..=hi);
        let col = self.rng.gen_range(lo..=hi);
        self.state = ScalarField2D::zeros(self.config.side, self.state.spacing())
            .expect("valid side");
        self.place_invader(row, col);
        self.fans = (false, false);
        self.step_count = 0;
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if action.len() != EXECUTABLE_DIM {
            return Err(Error::Dimension(format!(
                "executable action has {} entries, expected {EXECUTABLE_DIM}",
                action.len()
            )));
        }
        if self.step_count >= self.config.steps_per_episode {
            return Err(Error::Contract("step called after episode end".into()));
        }
        let mut a = action.to_vec();
        self.clipped += clip_action(&mut a, -0.5, 0.0);

        let cfg = &self.config;
        let ac = self.ac_source(&a);
        self.fans = fan_trigger(&a, cfg.fan_threshold);
        let vel = airflow_field(
            cfg.side,
            cfg.airflow,
            self.fans.0,
            self.fans.1,
            cfg.uniform_speed,
            cfg.whirl_rate,
        );
        let n = self.substeps(&vel);
        let dt = cfg.dt_agent / n as f64;
        let step = self.step_count;
        let blow_up = |e: Error| Error::BlowUp {
            step,
            reason: e.to_string(),
        };
        let mut t = self.state.clone();
        for _ in 0..n {
            let lap = laplacian(&t).map_err(blow_up)?;
            let conv = advect(&t, &vel).map_err(blow_up)?;
            for (idx, tv) in t.values_mut().iter_mut().enumerate() {
                *tv += dt
                    * (cfg.inv_peclet * lap.values()[idx] - conv.values()[idx]
                        + self.source[idx]
                        + ac[idx]);
            }
            t.check_finite().map_err(blow_up)?;
        }
        self.state = t;
        self.step_count += 1;
        Ok(StepResult {
            reward: heat_invader_reward(&self.state, &a, cfg.t_star),
            next_state: self.state.clone(),
            done: self.step_count >= cfg.steps_per_episode,
        })
    }

    fn state(&self) -> &ScalarField2D {
        &self.state
    }

    fn executable_dim(&self) -> usize {
        EXECUTABLE_DIM
    }

    fn action_bounds(&self) -> (f64, f64) {
        (-0.5, 0.0)
    }

    fn steps_per_episode(&self) -> usize {
        self.config.steps_per_episode
    }

    fn clipped_entries(&self) -> u64 {
        self.clipped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn env(seed: u64) -> HeatInvaderEnv {
        HeatInvaderEnv::new(HeatInvaderConfig::default(), stream(seed, 1)).unwrap()
    }

    #[test]
    fn reset_samples_invader_in_corner_block() {
        let mut e = env(5);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            let s = e.reset();
            assert!(s.values().iter().all(|v| *v == 0.0));
            let (r, c) = e.invader();
            assert!((45..=50).contains(&r) && (45..=50).contains(&c));
            seen.insert((r, c));
        }
        assert_eq!(seen.len(), 36);
        assert_eq!(e.fans(), (false, false));
    }

    #[test]
    fn reset_is_seeded() {
        let (mut a, mut b) = (env(11), env(11));
        for _ in 0..5 {
            a.reset();
            b.reset();
            assert_eq!(a.invader(), b.invader());
        }
    }

    #[test]
    fn fan_trigger_cases() {
        assert_eq!(fan_trigger(&[0.0; 200], 25.0), (false, false));
        let mut a = [0.0; 200];
        for row in a.chunks_mut(50) {
            row[..25].fill(-0.5);
        }
        assert_eq!(fan_trigger(&a, 25.0), (true, false));
        // each half sums to exactly 25
        let b = [-0.25; 200];
        assert_eq!(fan_trigger(&b, 25.0), (false, false));
    }

    #[test]
    fn airflow_cases() {
        let none = airflow_field(50, Airflow::Uniform, false, false, 0.2, 0.4);
        assert!(none.is_zero());
        let left = airflow_field(50, Airflow::Uniform, true, false, 0.2, 0.4);
        for i in 0..50 {
            for j in 0..50 {
                assert_eq!(left.vx(i, j), if j < 25 { 0.2 } else { 0.0 });
                assert_eq!(left.vy(i, j), 0.0);
            }
        }
        assert!(airflow_field(50, Airflow::Whirl, false, false, 0.2, 0.4).is_zero());
    }

    #[test]
    fn whirl_is_divergence_free() {
        let v = airflow_field(50, Airflow::Whirl, true, true, 0.2, 0.4);
        let h = 1.0 / 50.0;
        for i in 1..49 {
            for j in 1..49 {
                let div = (v.vx(i, j + 1) - v.vx(i, j - 1)) / (2.0 * h)
                    + (v.vy(i + 1, j) - v.vy(i - 1, j)) / (2.0 * h);
                assert!(div.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reward_spot_values() {
        let zero = ScalarField2D::zeros(50, 0.02).unwrap();
        assert_eq!(heat_invader_reward(&zero, &[0.0; 200], 0.501), 0.0);
        let warm = ScalarField2D::filled(50, 0.02, 0.6).unwrap();
        assert_eq!(heat_invader_reward(&warm, &[0.0; 200], 0.501), -1.0);
        let cost = -heat_invader_reward(&zero, &[-0.5; 200], 0.501);
        assert!((cost - 0.5 * 200f64.sqrt() / 200.0).abs() < 1e-15);
        assert!((cost - 0.035355).abs() < 1e-6);
    }

    #[test]
    fn invader_heats_its_corner() {
        let mut e = env(2);
        e.reset();
        e.place_invader(48, 48);
        let mut last = None;
        for _ in 0..40 {
            last = Some(e.step(&[0.0; 200]).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done);
        let s = &last.next_state;
        assert!(s.get(47, 47) > s.get(10, 10));
        assert!(s.get(47, 47) > 0.0);
    }

    #[test]
    fn conditioners_cool_their_rows() {
        let mut e = env(2);
        e.reset();
        let r = e.step(&[-0.5; 200]).unwrap();
        assert!(r.next_state.get(24, 10) < 0.0);
        assert!(r.next_state.get(5, 10).abs() < 1e-3);
        assert_eq!(e.fans(), (true, true));
    }

    #[test]
    fn substeps_grow_with_flow() {
        let e = env(0);
        let still = VelocityField2D::zeros(50);
        let fast = airflow_field(50, Airflow::Uniform, true, true, 0.2, 0.4);
        assert!(e.substeps(&fast) > e.substeps(&still));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn fan_trigger_is_monotone(a in prop::collection::vec(-0.5f64..0.0, 200),
                                   idx in 0usize..200, extra in 0.0f64..0.5) {
            let before = fan_trigger(&a, 25.0);
            let mut b = a.clone();
            b[idx] = -(b[idx].abs() + extra);
            let after = fan_trigger(&b, 25.0);
            prop_assert!(after.0 >= before.0 && after.1 >= before.1);
        }

        #[test]
        fn reward_stays_in_range(a in prop::collection::vec(-0.5f64..0.0, 200), seed in 0u64..1000) {
            let mut e = env(seed);
            e.reset();
            let r = e.step(&a).unwrap().reward;
            let max_cost = 0.5 * 200f64.sqrt() / 200.0;
            prop_assert!(r <= 0.0 && r >= -1.0 - max_cost);
        }
    }
}
