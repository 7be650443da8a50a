use serde::{Deserialize, Serialize};

use super::{
    actor_update, build_critic, critic_update, select_action, Actor, ActorKind, NoiseSchedule,
    OutputMap, ReplayBuffer, TransitionSample, DEFAULT_CAPACITY,
};
use crate::adapters::{Adapter, DescriptorSet};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::fields::ScalarField2D;
use crate::nn::{Activation, Network};
use crate::rng::{stream, Rng, STREAM_INIT, STREAM_NOISE, STREAM_REPLAY};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub critic_decay: f64,
    pub batch_size: usize,
    pub episodes: usize,
    pub buffer_capacity: usize,
    pub noise: NoiseSchedule,
    pub seed: u64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_output: Activation,
    /// Side of the grid the networks see; the state is area-downsampled to it.
    pub observation_side: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.001,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            critic_decay: 0.001,
            batch_size: 16,
            episodes: 200,
            buffer_capacity: DEFAULT_CAPACITY,
            noise: NoiseSchedule::Decaying,
            seed: 0,
            actor_hidden: vec![32, 32],
            critic_hidden: vec![32, 32],
            actor_output: Activation::Tanh,
            observation_side: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.actor_lr < 0.0 || self.critic_lr < self.actor_lr {
            return bad(format!(
                "need 0 <= actor_lr <= critic_lr, got {} and {}",
                self.actor_lr, self.critic_lr
            ));
        }
        if self.batch_size == 0 || self.episodes == 0 || self.buffer_capacity == 0 {
            return bad("batch size, episodes and buffer capacity must be positive".into());
        }
        if self.actor_hidden.is_empty() {
            return bad("actor needs at least one hidden layer".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub mean_reward_per_step: f64,
    pub noise_variance: f64,
    pub aborts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub run: usize,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    run: usize,
    episode: usize,
    mean_reward_per_step: f64,
    noise_variance: f64,
    aborts: usize,
}

impl RunLog {
    pub fn mean_rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.mean_reward_per_step).collect()
    }

    pub fn total_aborts(&self) -> usize {
        self.episodes.iter().map(|e| e.aborts).sum()
    }

    /// CSV with header `run,episode,mean_reward_per_step,noise_variance,aborts`.
    pub fn to_csv(logs: &[RunLog]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for log in logs {
            for e in &log.episodes {
                w.serialize(Row {
                    run: log.run,
                    episode: e.episode,
                    mean_reward_per_step: e.mean_reward_per_step,
                    noise_variance: e.noise_variance,
                    aborts: e.aborts,
                })
                .map_err(csv_error)?;
            }
        }
        if logs.iter().all(|l| l.episodes.is_empty()) {
            w.write_record(["run", "episode", "mean_reward_per_step", "noise_variance", "aborts"])
                .map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Groups rows by run, keeping the order in which runs first appear.
    pub fn from_csv(text: &str) -> Result<Vec<RunLog>> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(csv_error)?.clone();
        if headers.iter().collect::<Vec<_>>()
            != ["run", "episode", "mean_reward_per_step", "noise_variance", "aborts"]
        {
            return Err(Error::Parse(format!("unexpected run log header {headers:?}")));
        }
        let mut logs: Vec<RunLog> = Vec::new();
        for row in r.deserialize::<Row>() {
            let row = row.map_err(csv_error)?;
            let rec = EpisodeRecord {
                episode: row.episode,
                mean_reward_per_step: row.mean_reward_per_step,
                noise_variance: row.noise_variance,
                aborts: row.aborts,
            };
            match logs.iter_mut().find(|l| l.run == row.run) {
                Some(l) => l.episodes.push(rec),
                None => logs.push(RunLog {
                    run: row.run,
                    episodes: vec![rec],
                }),
            }
        }
        Ok(logs)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// All mutable state of one training run.
pub struct Trainer<E: Environment> {
    env: E,
    c: DescriptorSet,
    adapter: Adapter,
    config: TrainConfig,
    actor: Actor,
    actor_target: Actor,
    critic: Network,
    critic_target: Network,
    buffer: ReplayBuffer,
    noise_rng: Rng,
    bounds: (f64, f64),
    episode: usize,
    run: usize,
    log: Vec<EpisodeRecord>,
}

impl<E: Environment> Trainer<E> {
    /// Networks, noise and replay sampling draw from streams of
    /// `config.seed`; the environment brings its own generator.
    pub fn new(
        env: E,
        kind: ActorKind,
        c: DescriptorSet,
        adapter: Adapter,
        config: TrainConfig,
        run: usize,
    ) -> Result<Self> {
        config.validate()?;
        let probe = adapter.apply(&c, &vec![0.0; c.len()])?;
        if probe.len() != env.executable_dim() {
            return Err(Error::Dimension(format!(
                "adapter produces {} entries, environment expects {}",
                probe.len(),
                env.executable_dim()
            )));
        }
        let side = config.observation_side.unwrap_or(env.state().side());
        let inputs = side * side;
        let bounds = env.action_bounds();
        let map = OutputMap::for_range(config.actor_output, bounds.0, bounds.1);
        let mut init = stream(config.seed, STREAM_INIT);
        let actor = Actor::new(
            kind,
            inputs,
            &c,
            &config.actor_hidden,
            config.actor_output,
            map,
            &mut init,
        )?;
        let critic = build_critic(inputs, c.len(), &config.critic_hidden, &mut init)?;
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            buffer: ReplayBuffer::new(config.buffer_capacity, stream(config.seed, STREAM_REPLAY)),
            noise_rng: stream(config.seed, STREAM_NOISE),
            bounds,
            env,
            c,
            adapter,
            config,
            episode: 0,
            run,
            log: Vec::new(),
        })
    }

    pub fn actor(&self) -> &Actor {
        &self.actor
    }

    pub fn actor_target(&self) -> &Actor {
        &self.actor_target
    }

    pub fn critic(&self) -> &Network {
        &self.critic
    }

    pub fn critic_target(&self) -> &Network {
        &self.critic_target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    fn observe(&self, state: &ScalarField2D) -> Result<ScalarField2D> {
        match self.config.observation_side {
            Some(s) if s != state.side() => state.downsample(s),
            _ => Ok(state.clone()),
        }
    }

    fn update(&mut self) -> Result<()> {
        let idx = self.buffer.sample_indices(self.config.batch_size);
        let batch: Vec<&TransitionSample> = idx
            .iter()
            .map(|&i| self.buffer.get(i).expect("index drawn from contents"))
            .collect();
        critic_update(
            &mut self.critic,
            &self.critic_target,
            &self.actor_target,
            &batch,
            &self.c,
            self.config.gamma,
            self.config.critic_lr,
            self.config.critic_decay,
        )?;
        actor_update(&mut self.actor, &self.critic, &batch, &self.c, self.config.actor_lr)?;
        self.actor_target.soft_update_from(&self.actor, self.config.tau)?;
        self.critic_target.soft_update_from(&self.critic, self.config.tau)
    }

    /// Plays one episode, updating after every step once the buffer holds a
    /// batch. A simulation blow-up ends the episode early and is counted.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        self.episode += 1;
        let variance = self.config.noise.variance(self.episode);
        let start = self.env.reset();
        let mut x = self.observe(&start)?;
        let mut total = 0.0;
        let mut steps = 0usize;
        let mut aborts = 0;
        for _ in 0..self.env.steps_per_episode() {
            let (u, _) = select_action(&self.actor, &x, &self.c, variance, self.bounds, &mut self.noise_rng)?;
            let a = self.adapter.apply(&self.c, &u)?;
            let res = match self.env.step(&a) {
                Ok(res) => res,
                Err(Error::BlowUp { step, reason }) => {
                    log::warn!(
                        "run {} episode {}: aborted at step {step}: {reason}",
                        self.run,
                        self.episode
                    );
                    aborts = 1;
                    break;
                }
                Err(e) => return Err(e),
            };
            total += res.reward;
            steps += 1;
            let x_next = self.observe(&res.next_state)?;
            self.buffer.push(TransitionSample {
                x,
                u,
                x_next: x_next.clone(),
                r: res.reward,
            });
            if self.buffer.len() >= self.config.batch_size {
                self.update()?;
            }
            x = x_next;
            if res.done {
                break;
            }
        }
        let rec = EpisodeRecord {
            episode: self.episode,
            mean_reward_per_step: if steps == 0 { 0.0 } else { total / steps as f64 },
            noise_variance: variance,
            aborts,
        };
        self.log.push(rec.clone());
        Ok(rec)
    }

    pub fn run(&mut self) -> Result<RunLog> {
        while self.episode < self.config.episodes {
            self.run_episode()?;
        }
        Ok(RunLog {
            run: self.run,
            episodes: self.log.clone(),
        })
    }
}

/// Builds a [`Trainer`] and runs every configured episode.
pub fn train_run<E: Environment>(
    env: E,
    kind: ActorKind,
    c: DescriptorSet,
    adapter: Adapter,
    config: TrainConfig,
    run: usize,
) -> Result<RunLog> {
    Trainer::new(env, kind, c, adapter, config, run)?.run()
}
