//! DDPG with pluggable actors.
//!
//! The actor emits `k` action scalars `u`; an [`Adapter`](crate::adapters::Adapter)
//! turns them into the executable action. The critic sees `u` directly, so
//! all three actor variants share the same critic and update rules.

mod actor;
mod replay;
mod run;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

pub use actor::{Actor, ActorCache, ActorGrads, ActorKind, OutputMap};
pub use replay::{ReplayBuffer, TransitionSample, DEFAULT_CAPACITY};
pub use run::{train_run, EpisodeRecord, RunLog, TrainConfig, Trainer};

use crate::adapters::DescriptorSet;
use crate::error::{Error, Result};
use crate::fields::ScalarField2D;
use crate::nn::gradcheck::{self, GradReport};
use crate::nn::{init_network, Activation, GradientSet, Network, NetworkSpec};
use crate::rng::{stream, Rng};

/// Variance of the exploration noise per episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSchedule {
    /// `1 / episode`, with 1-based episodes.
    Decaying,
    Constant(f64),
}

impl NoiseSchedule {
    pub fn variance(self, episode: usize) -> f64 {
        match self {
            NoiseSchedule::Decaying => 1.0 / episode.max(1) as f64,
            NoiseSchedule::Constant(v) => v,
        }
    }
}

/// Returns `(u, u_clean)`: the actor output plus Gaussian noise of the given
/// variance, clipped to `bounds`, and the noiseless output.
pub fn select_action(
    actor: &Actor,
    x: &ScalarField2D,
    c: &DescriptorSet,
    variance: f64,
    bounds: (f64, f64),
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let clean = actor.act(x.values(), c)?;
    let noise = Normal::new(0.0, variance.max(0.0).sqrt())
        .map_err(|e| Error::Config(format!("noise variance {variance}: {e}")))?;
    let u = clean
        .iter()
        .map(|v| (v + noise.sample(rng)).clamp(bounds.0, bounds.1))
        .collect();
    Ok((u, clean))
}

/// Critic with `k` action scalars concatenated onto the state features and
/// L2 decay on every dense layer.
pub fn build_critic(inputs: usize, k: usize, hidden: &[usize], rng: &mut Rng) -> Result<Network> {
    let mut net = init_network(&NetworkSpec::dense(inputs, k, hidden, 1, Activation::Linear), rng)?;
    net.set_decay_from(0);
    Ok(net)
}

/// `y_i = r_i + gamma * Q'(x'_i, mu'(x'_i))`, using target networks only.
/// Time-limit ends are bootstrapped like any other step.
pub fn bellman_targets(
    critic_target: &Network,
    actor_target: &Actor,
    batch: &[&TransitionSample],
    c: &DescriptorSet,
    gamma: f64,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|s| {
            if gamma == 0.0 {
                return Ok(s.r);
            }
            let u_next = actor_target.act(s.x_next.values(), c)?;
            let q_next = critic_target.predict(s.x_next.values(), &u_next)?[0];
            Ok(s.r + gamma * q_next)
        })
        .collect()
}

/// Loss `(1/N) sum (y_i - Q(x_i, u_i))^2` and its parameter gradient.
pub fn critic_loss_gradient(
    critic: &Network,
    batch: &[&TransitionSample],
    targets: &[f64],
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(Error::Dimension("critic batch and targets".into()));
    }
    let n = batch.len() as f64;
    let mut grads = GradientSet::zeros_like(critic);
    let mut loss = 0.0;
    for (s, y) in batch.iter().zip(targets) {
        let (q, cache) = critic.forward(s.x.values(), &s.u)?;
        let err = y - q[0];
        loss += err * err;
        grads.accumulate(&critic.backward(&cache, &[-2.0 * err / n])?);
    }
    Ok((loss / n, grads))
}

/// One SGD step on the mean squared Bellman error. Returns the loss before
/// the step.
#[allow(clippy::too_many_arguments)]
pub fn critic_update(
    critic: &mut Network,
    critic_target: &Network,
    actor_target: &Actor,
    batch: &[&TransitionSample],
    c: &DescriptorSet,
    gamma: f64,
    lr: f64,
    l2_decay: f64,
) -> Result<f64> {
    let targets = bellman_targets(critic_target, actor_target, batch, c, gamma)?;
    let (loss, grads) = critic_loss_gradient(critic, batch, &targets)?;
    critic.apply_update(&grads, lr, l2_decay)?;
    Ok(loss)
}

/// `(1/N) sum_i grad_theta Q(x_i, mu_theta(x_i))`, the ascent direction.
pub fn actor_gradients(
    actor: &Actor,
    critic: &Network,
    states: &[&ScalarField2D],
    c: &DescriptorSet,
) -> Result<ActorGrads> {
    if states.is_empty() {
        return Err(Error::Dimension("empty actor batch".into()));
    }
    let mut total = actor.zero_grads();
    for x in states {
        let (u, acache) = actor.forward(x.values(), c)?;
        let (_, ccache) = critic.forward(x.values(), &u)?;
        let dq_du = critic.backward(&ccache, &[1.0])?.aux;
        for (t, g) in total.iter_mut().zip(actor.backward(&acache, &dq_du)?) {
            t.accumulate(&g);
        }
    }
    let inv = 1.0 / states.len() as f64;
    total.iter_mut().for_each(|g| g.scale(inv));
    Ok(total)
}

/// Gradient ascent on `Q(x, mu(x))` with step `lr`.
pub fn actor_update(
    actor: &mut Actor,
    critic: &Network,
    batch: &[&TransitionSample],
    c: &DescriptorSet,
    lr: f64,
) -> Result<()> {
    let states: Vec<&ScalarField2D> = batch.iter().map(|s| &s.x).collect();
    let mut grads = actor_gradients(actor, critic, &states, c)?;
    grads.iter_mut().for_each(|g| g.scale(-1.0));
    actor.apply_update(&grads, lr)
}

/// Blends `source` into `target` in place.
pub fn soft_update(target: &mut [f64], source: &[f64], tau: f64) -> Result<()> {
    if target.len() != source.len() {
        return Err(Error::Dimension("soft update between different shapes".into()));
    }
    target
        .iter_mut()
        .zip(source)
        .for_each(|(t, s)| *t = crate::nn::soft_blend(*t, *s, tau));
    Ok(())
}

/// Finite-difference check of `d/dtheta Q(x, mu_theta(x))` for a small
/// randomly initialized actor/critic pair.
pub fn composite_gradcheck(kind: ActorKind, seed: u64) -> Result<GradReport> {
    let mut rng = stream(seed, 0);
    let c = DescriptorSet::new(vec![vec![-0.4, 0.3], vec![0.1, -0.2], vec![0.5, 0.45]])?;
    let side = 3;
    let inputs = side * side;
    let map = OutputMap::for_range(Activation::Sigmoid, -0.5, 0.0);
    let mut actor = Actor::new(kind, inputs, &c, &[5, 4], Activation::Sigmoid, map, &mut rng)?;
    let params: Vec<f64> = (0..actor.param_count()).map(|_| rng.gen_range(-0.8..0.8)).collect();
    actor.set_flat_params(&params)?;
    let mut critic = build_critic(inputs, c.len(), &[6, 4], &mut rng)?;
    gradcheck::randomize(&mut critic, &mut rng, 0.8);
    let values: Vec<f64> = (0..inputs).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = ScalarField2D::from_vec(side, 1.0, values)?;

    let analytic = actor_gradients(&actor, &critic, &[&x], &c)?;
    let mut probe = actor.clone();
    let numeric = gradcheck::central_difference(&params, gradcheck::STEP, |p| {
        probe.set_flat_params(p).expect("same length");
        let u = probe.act(x.values(), &c).expect("valid shapes");
        critic.predict(x.values(), &u).expect("valid shapes")[0]
    });
    let mut worst: f64 = 0.0;
    let mut offset = 0;
    for g in &analytic {
        for l in &g.layers {
            for t in [&l.weights, &l.bias] {
                if t.is_empty() {
                    continue;
                }
                worst = worst.max(gradcheck::relative_error(t, &numeric[offset..offset + t.len()]));
                offset += t.len();
            }
        }
    }
    Ok(GradReport {
        label: format!("actor-through-critic [{}]", kind.name()),
        params: worst,
        input: 0.0,
        aux: 0.0,
    })
}
