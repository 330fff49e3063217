//! Plain single-worker A3C over primitive steps, with a softmax actor and no
//! repetition head.

use super::A3cConfig;
use crate::envs::{Action, ActionSpace, Environment};
use crate::error::{Error, Result};
use crate::numcore::{categorical, LinearAnneal, Mlp, Optimizer, OptimizerKind, OutputTransform};
use crate::policy::{PolicyArch, HEAD_INIT_SCALE};
use crate::rng;

#[derive(Clone, Debug)]
pub struct PlainA3cOutcome {
    pub actor: Mlp<f64>,
    pub critic: Mlp<f64>,
    /// `[actor | critic]` parameters after every update.
    pub trajectory: Vec<Vec<f64>>,
    pub episode_returns: Vec<f64>,
}

/// Softmax actor initialized from the same stream as a factored policy's action head.
pub fn plain_actor(observation_dim: usize, actions: usize, arch: &PolicyArch, seed: u64) -> Result<Mlp<f64>> {
    if arch.shared_trunk {
        return Err(Error::Config("plain actor has no shared trunk".into()));
    }
    let sizes: Vec<usize> = std::iter::once(observation_dim)
        .chain(arch.hidden.iter().copied())
        .chain(std::iter::once(actions))
        .collect();
    Ok(Mlp::new(&sizes, arch.activation, OutputTransform::Softmax)?
        .initialized(&mut rng::stream(seed, "policy.action", 0), HEAD_INIT_SCALE))
}

/// Trains for `config.total_decision_steps` primitive steps (one action per step).
pub fn train_plain(
    config: &A3cConfig,
    env: &dyn Environment,
    mut actor: Mlp<f64>,
    mut critic: Mlp<f64>,
    seed: u64,
) -> Result<PlainA3cOutcome> {
    config.validate()?;
    if config.num_workers != 1 {
        return Err(Error::Config("plain a3c runs a single worker".into()));
    }
    let ActionSpace::Discrete(_) = env.spec().action_space else {
        return Err(Error::Config("plain a3c needs a discrete action space".into()));
    };
    let gamma = env.spec().discount;
    let budget = config.total_decision_steps;
    let actor_len = actor.params().len();
    let mut params: Vec<f64> = actor.params().values().to_vec();
    params.extend_from_slice(critic.params().values());
    let mut optimizer = Optimizer::new(
        OptimizerKind::RmsProp {
            decay: config.rmsprop_decay,
            eps: config.rmsprop_eps,
        },
        LinearAnneal::to_zero(config.lr, budget),
        params.len(),
    );
    let mut env = env.boxed_clone();
    let mut rng = rng::stream(seed, "a3c.worker", 0);
    let episode_seed = |ep: u64| rng::derive_seed(seed, "a3c.episode", ep);
    let mut episode = 0;
    let mut obs = env.reset(episode_seed(episode));
    let mut episode_return = 0.0;
    let mut episode_returns = Vec::new();
    let mut trajectory = Vec::new();
    let mut step = 0u64;

    while step < budget {
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut done = false;
        while states.len() < config.n && step < budget {
            step += 1;
            let probs = actor.forward(&obs)?;
            let a = categorical::sample(&probs, &mut rng);
            let s = env.step(&Action::Discrete(a))?;
            episode_return += s.reward;
            states.push(std::mem::replace(&mut obs, s.observation));
            actions.push(a);
            rewards.push(s.reward);
            if s.terminal {
                done = true;
                episode_returns.push(episode_return);
                episode_return = 0.0;
                episode += 1;
                obs = env.reset(episode_seed(episode));
                break;
            }
        }
        let mut ret = if done { 0.0 } else { critic.forward(&obs)?[0] };
        let mut returns = vec![0.0; rewards.len()];
        for t in (0..rewards.len()).rev() {
            ret = rewards[t] + gamma * ret;
            returns[t] = ret;
        }

        let n = states.len() as f64;
        let mut actor_grad = vec![0.0; actor_len];
        let mut critic_grad = vec![0.0; critic.params().len()];
        for ((state, &a), &target) in states.iter().zip(&actions).zip(&returns) {
            let value = critic.forward(state)?[0];
            let advantage = target - value;
            let trace = actor.forward_trace(state)?;
            let p = trace.output();
            let mut upstream = vec![0.0; p.len()];
            upstream[a] = -advantage / p[a];
            for (u, e) in upstream.iter_mut().zip(categorical::entropy_grad(p)) {
                *u += e * -config.entropy_beta;
            }
            let g = actor.backward(&trace, &upstream)?;
            for (acc, v) in actor_grad.iter_mut().zip(g.params.values()) {
                *acc += v;
            }
            let ctrace = critic.forward_trace(state)?;
            let v = ctrace.output()[0];
            let g = critic.backward(&ctrace, &[-2.0 * (target - v) / n])?;
            for (acc, v) in critic_grad.iter_mut().zip(g.params.values()) {
                *acc += v;
            }
        }
        actor_grad.extend_from_slice(&critic_grad);
        optimizer.step(&mut params, &actor_grad, step)?;
        actor.params_mut().assign(&params[..actor_len])?;
        critic.params_mut().assign(&params[actor_len..])?;
        trajectory.push(params.clone());
    }
    Ok(PlainA3cOutcome {
        actor,
        critic,
        trajectory,
        episode_returns,
    })
}
