use super::{
    act_explore, actor_loss, actor_output, critic_loss, critic_targets, one_hot, Critic, DdpgConfig, OuNoise,
    ReplayBuffer, ReplayEntry, TargetNets,
};
use crate::envs::{execute_macro, ActionSpace, Environment};
use crate::error::{Error, Result};
use crate::numcore::{categorical, LinearAnneal, Optimizer, OptimizerKind};
use crate::oracle::evaluate_policy;
use crate::policy::{FactoredPolicy, SamplingMode};
use crate::rng;
use crate::trainlog::{EvalSnapshot, LogAccumulator, TrainingLog};

#[derive(Clone, Debug)]
pub struct DdpgOutcome {
    pub actor: FactoredPolicy<f64>,
    pub critic: Critic<f64>,
    pub targets: TargetNets,
    pub log: TrainingLog,
    /// `[actor | critic]` parameters after every update, when recorded.
    pub trajectory: Vec<Vec<f64>>,
    /// Decisions taken; below the budget when training stopped early.
    pub steps: u64,
}

/// Runs `config.total_train_steps` decisions, updating once per decision as
/// soon as the replay holds a full batch.
pub fn train(
    config: &DdpgConfig,
    env: &dyn Environment,
    actor: FactoredPolicy<f64>,
    critic: Critic<f64>,
    seed: u64,
) -> Result<DdpgOutcome> {
    run(config, env, actor, critic, seed, false)
}

pub fn train_recording(
    config: &DdpgConfig,
    env: &dyn Environment,
    actor: FactoredPolicy<f64>,
    critic: Critic<f64>,
    seed: u64,
) -> Result<DdpgOutcome> {
    run(config, env, actor, critic, seed, true)
}

fn run(
    config: &DdpgConfig,
    env: &dyn Environment,
    mut actor: FactoredPolicy<f64>,
    mut critic: Critic<f64>,
    seed: u64,
    record: bool,
) -> Result<DdpgOutcome> {
    config.validate()?;
    let ActionSpace::Continuous { low, high } = env.spec().action_space.clone() else {
        return Err(Error::Config("ddpg needs a continuous action space".into()));
    };
    let set = actor.repetition_set().clone();
    let gamma = env.spec().discount;
    let schedule = config.epsilon();
    let adam = OptimizerKind::adam();
    let mut actor_opt = Optimizer::new(adam, LinearAnneal::constant(config.actor_lr), actor.layout().total());
    let mut critic_opt = Optimizer::new(adam, LinearAnneal::constant(config.critic_lr), critic.layout().total());
    let mut targets = TargetNets::new(&actor, &critic);
    let mut replay = ReplayBuffer::new(config.replay_capacity)?;
    let mut noise = OuNoise::new(low.len(), config.ou_theta, config.ou_sigma, config.ou_mu);
    let mut rng = rng::stream(seed, "ddpg.train", 0);
    let mut env = env.boxed_clone();
    let mut episode = 0u64;
    let mut obs = env.reset(rng::derive_seed(seed, "ddpg.episode", episode));
    let mut episode_return = 0.0;
    let mut log = LogAccumulator::new(config.log_interval, config.log_wallclock);
    let mut trajectory = Vec::new();
    let mut updates = 0u64;
    let mut steps = config.total_train_steps;

    for step in 0..config.total_train_steps {
        let ex = act_explore(&actor, &obs, schedule.value(step), (&low, &high), &mut noise, &mut rng)?;
        let t = execute_macro(env.as_mut(), &ex.action, ex.repetition, &set, gamma)?;
        episode_return += t.undiscounted_reward();
        log.record_decision(ex.repetition, 0.0, categorical::entropy(&ex.repetition_probs), t.elapsed);
        replay.push(ReplayEntry {
            state: std::mem::replace(&mut obs, t.next_state.clone()),
            action: ex.vector,
            repetition: one_hot(set.len(), ex.repetition_index)?,
            reward: t.macro_reward,
            elapsed: t.elapsed,
            next_state: t.next_state,
            terminal: t.terminal && !t.truncated,
        })?;
        if t.terminal {
            log.record_episode(episode_return);
            episode_return = 0.0;
            episode += 1;
            obs = env.reset(rng::derive_seed(seed, "ddpg.episode", episode));
            noise.reset();
        }

        if replay.len() >= config.batch_size {
            let batch = replay.sample(config.batch_size, &mut rng)?;
            let ys = critic_targets(&batch, &targets.critic, |s| actor_output(&targets.actor, s), gamma)?;
            let (_, cg) = critic_loss(&critic, &batch, &ys)?;
            let states: Vec<&[f64]> = batch.iter().map(|e| e.state.as_slice()).collect();
            let (_, ag) = actor_loss(&actor, &critic, &states)?;
            if !cg.is_finite() || !ag.is_finite() {
                return Err(Error::Numeric("ddpg gradient is not finite".into()));
            }
            updates += 1;
            let mut cp = critic.params().into_values();
            critic_opt.step(&mut cp, cg.values(), updates)?;
            critic.set_params(&cp)?;
            let mut ap = actor.params().into_values();
            actor_opt.step(&mut ap, ag.values(), updates)?;
            actor.set_params(&ap)?;
            targets.soft_update(&actor, &critic, config.tau)?;
            if record {
                ap.extend_from_slice(&cp);
                trajectory.push(ap);
            }
        }
        log.maybe_emit(step + 1);
        if config.eval_interval > 0 && (step + 1) % config.eval_interval == 0 {
            let mut eval_env = env.boxed_clone();
            let ev = evaluate_policy(
                &actor,
                eval_env.as_mut(),
                config.eval_episodes.max(1),
                SamplingMode::Greedy,
                rng::derive_seed(seed, "ddpg.eval", step + 1),
            )?;
            log.evaluation(EvalSnapshot::new(step + 1, &ev));
            if config.stop_at_success.is_some_and(|target| ev.success_rate() >= target) {
                steps = step + 1;
                break;
            }
        }
    }
    Ok(DdpgOutcome {
        actor,
        critic,
        targets,
        log: log.finish(steps),
        trajectory,
        steps,
    })
}
