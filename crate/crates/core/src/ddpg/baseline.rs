//! Plain DDPG over primitive steps: a bounded deterministic actor and a
//! critic without repetition inputs.

use super::{critic_loss, critic_targets, soft_update, Critic, DdpgConfig, OuNoise, ReplayBuffer, ReplayEntry};
use crate::envs::{Action, ActionSpace, Environment};
use crate::error::{Error, Result};
use crate::numcore::{LinearAnneal, Mlp, Optimizer, OptimizerKind, OutputTransform, ParamVector};
use crate::policy::{PolicyArch, HEAD_INIT_SCALE};
use crate::rng;

#[derive(Clone, Debug)]
pub struct PlainDdpgOutcome {
    pub actor: Mlp<f64>,
    pub critic: Critic<f64>,
    /// `[actor | critic]` parameters after every update.
    pub trajectory: Vec<Vec<f64>>,
    pub episode_returns: Vec<f64>,
}

/// Actor initialized from the same stream as a factored policy's action head.
pub fn plain_actor(observation_dim: usize, space: &ActionSpace, arch: &PolicyArch, seed: u64) -> Result<Mlp<f64>> {
    let ActionSpace::Continuous { low, high } = space else {
        return Err(Error::Config("plain ddpg needs a continuous action space".into()));
    };
    if arch.shared_trunk {
        return Err(Error::Config("plain actor has no shared trunk".into()));
    }
    let sizes: Vec<usize> = std::iter::once(observation_dim)
        .chain(arch.hidden.iter().copied())
        .chain(std::iter::once(low.len()))
        .collect();
    let out = OutputTransform::BoundedTanh {
        low: low.clone(),
        high: high.clone(),
    };
    Ok(Mlp::new(&sizes, arch.activation, out)?.initialized(&mut rng::stream(seed, "policy.action", 0), HEAD_INIT_SCALE))
}

pub fn train_plain(
    config: &DdpgConfig,
    env: &dyn Environment,
    mut actor: Mlp<f64>,
    mut critic: Critic<f64>,
    seed: u64,
) -> Result<PlainDdpgOutcome> {
    config.validate()?;
    let ActionSpace::Continuous { low, high } = env.spec().action_space.clone() else {
        return Err(Error::Config("plain ddpg needs a continuous action space".into()));
    };
    if critic.repetition_dim() != 0 {
        return Err(Error::Config("plain ddpg critic takes no repetition input".into()));
    }
    let gamma = env.spec().discount;
    let adam = OptimizerKind::adam();
    let mut actor_opt = Optimizer::new(adam, LinearAnneal::constant(config.actor_lr), actor.params().len());
    let mut critic_opt = Optimizer::new(adam, LinearAnneal::constant(config.critic_lr), critic.layout().total());
    let mut target_actor = actor.clone();
    let mut target_critic = critic.clone();
    let mut replay = ReplayBuffer::new(config.replay_capacity)?;
    let mut noise = OuNoise::new(low.len(), config.ou_theta, config.ou_sigma, config.ou_mu);
    let mut rng = rng::stream(seed, "ddpg.train", 0);
    let mut env = env.boxed_clone();
    let mut episode = 0u64;
    let mut obs = env.reset(rng::derive_seed(seed, "ddpg.episode", episode));
    let mut episode_return = 0.0;
    let mut episode_returns = Vec::new();
    let mut trajectory = Vec::new();
    let mut updates = 0u64;

    for _ in 0..config.total_train_steps {
        let mu = actor.forward(&obs)?;
        let n = noise.sample(&mut rng);
        let a: Vec<f64> = mu
            .iter()
            .zip(n)
            .zip(low.iter().zip(&high))
            .map(|((m, z), (&lo, &hi))| (m + z).clamp(lo, hi))
            .collect();
        let s = env.step(&Action::Continuous(a.clone()))?;
        episode_return += s.reward;
        replay.push(ReplayEntry {
            state: std::mem::replace(&mut obs, s.observation.clone()),
            action: a,
            repetition: vec![1.0],
            reward: s.reward,
            elapsed: 1,
            next_state: s.observation,
            terminal: s.terminal && !s.truncated,
        })?;
        if s.terminal {
            episode_returns.push(episode_return);
            episode_return = 0.0;
            episode += 1;
            obs = env.reset(rng::derive_seed(seed, "ddpg.episode", episode));
            noise.reset();
        }

        if replay.len() >= config.batch_size {
            let batch = replay.sample(config.batch_size, &mut rng)?;
            let ys = critic_targets(&batch, &target_critic, |s| Ok((target_actor.forward(s)?, Vec::new())), gamma)?;
            let (_, cg) = critic_loss(&critic, &batch, &ys)?;
            let b = batch.len() as f64;
            let mut ag = ParamVector::zeros(actor.layout().clone());
            for e in &batch {
                let trace = actor.forward_trace(&e.state)?;
                let ct = critic.forward_trace(&e.state, trace.output(), &[])?;
                let g = critic.backward(&ct, -1.0 / b)?;
                ag.axpy(1.0, &actor.backward(&trace, &g.action)?.params)?;
            }
            if !cg.is_finite() || !ag.is_finite() {
                return Err(Error::Numeric("ddpg gradient is not finite".into()));
            }
            updates += 1;
            let mut cp = critic.params().into_values();
            critic_opt.step(&mut cp, cg.values(), updates)?;
            critic.set_params(&cp)?;
            let mut ap = actor.params().values().to_vec();
            actor_opt.step(&mut ap, ag.values(), updates)?;
            actor.params_mut().assign(&ap)?;
            let mut ta = target_actor.params().clone();
            soft_update(&mut ta, actor.params(), config.tau)?;
            target_actor.params_mut().assign(ta.values())?;
            let mut tc = target_critic.params();
            soft_update(&mut tc, &critic.params(), config.tau)?;
            target_critic.set_params(tc.values())?;
            ap.extend_from_slice(&cp);
            trajectory.push(ap);
        }
    }
    Ok(PlainDdpgOutcome {
        actor,
        critic,
        trajectory,
        episode_returns,
    })
}
