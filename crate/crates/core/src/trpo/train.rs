use super::{track_best_policy, trust_region_update, SurrogateBatch, TrpoConfig, TrustRegionStep};
use crate::envs::{execute_macro, Environment};
use crate::error::{Error, Result};
use crate::numcore::categorical;
use crate::policy::{action_entropy, FactoredPolicy, SamplingMode};
use crate::rng::{self, StreamRng};
use crate::trainlog::{LogAccumulator, TrainingLog};

#[derive(Clone, Debug)]
pub struct TrpoOutcome {
    /// Parameters after the last improvement step.
    pub policy: FactoredPolicy<f64>,
    /// Policy whose batch had the highest average return.
    pub best_policy: FactoredPolicy<f64>,
    pub best_index: usize,
    /// Average undiscounted batch return before each improvement step.
    pub history: Vec<f64>,
    pub steps: Vec<TrustRegionStep>,
    pub log: TrainingLog,
    /// Parameters after every update, when recorded.
    pub trajectory: Vec<Vec<f64>>,
}

/// Runs `episodes` full episodes with stochastic decisions and records the
/// frozen head outputs. Episode `i` of the run is seeded from `first_episode + i`.
pub fn gather_batch(
    policy: &FactoredPolicy<f64>,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
    first_episode: u64,
    rng: &mut StreamRng,
) -> Result<SurrogateBatch> {
    if episodes == 0 {
        return Err(Error::Usage("batch needs at least one episode".into()));
    }
    let gamma = env.spec().discount;
    let set = policy.repetition_set().clone();
    let mut batch = SurrogateBatch::default();
    for i in 0..episodes as u64 {
        let mut obs = env.reset(rng::derive_seed(seed, "trpo.episode", first_episode + i));
        let mut rewards = Vec::new();
        let mut ret = 0.0;
        loop {
            let eval = policy.evaluate(&obs)?;
            let d = policy.decide_from(&eval, SamplingMode::Stochastic, rng, None)?;
            let t = execute_macro(env, &d.action, d.repetition, &set, gamma)?;
            ret += t.undiscounted_reward();
            batch.primitive_steps += t.elapsed;
            rewards.push((t.macro_reward, t.elapsed));
            batch.observations.push(std::mem::replace(&mut obs, t.next_state));
            batch.actions.push(d.action);
            batch.repetitions.push(d.repetition);
            batch.repetition_indices.push(d.repetition_index);
            batch.old_logprob_a.push(d.logprob_a);
            batch.old_logprob_x.push(d.logprob_x);
            batch.old_action.push(eval.action);
            batch.old_repetition.push(eval.repetition);
            if t.terminal {
                break;
            }
        }
        let mut q = vec![0.0; rewards.len()];
        let mut acc = 0.0;
        for (j, &(r, elapsed)) in rewards.iter().enumerate().rev() {
            acc = r + gamma.powi(elapsed as i32) * acc;
            q[j] = acc;
        }
        batch.q.extend(q);
        batch.episode_returns.push(ret);
    }
    Ok(batch)
}

/// Runs `config.improvement_steps` trust-region updates.
pub fn train(config: &TrpoConfig, env: &dyn Environment, policy: FactoredPolicy<f64>, seed: u64) -> Result<TrpoOutcome> {
    run(config, env, policy, seed, false)
}

/// Like [`train`], additionally recording the parameters after every update.
pub fn train_recording(
    config: &TrpoConfig,
    env: &dyn Environment,
    policy: FactoredPolicy<f64>,
    seed: u64,
) -> Result<TrpoOutcome> {
    run(config, env, policy, seed, true)
}

fn run(config: &TrpoConfig, env: &dyn Environment, policy: FactoredPolicy<f64>, seed: u64, record: bool) -> Result<TrpoOutcome> {
    config.validate()?;
    let mut trajectory = Vec::new();
    let mut env = env.boxed_clone();
    let mut policy = policy;
    let mut history = Vec::with_capacity(config.improvement_steps);
    let mut steps = Vec::with_capacity(config.improvement_steps);
    let mut best: Option<FactoredPolicy<f64>> = None;
    let mut log = LogAccumulator::new(u64::MAX, config.log_wallclock);
    let mut episode = 0u64;
    let mut decisions = 0u64;
    for iter in 0..config.improvement_steps {
        let k = config.k_schedule.episodes(&history);
        let mut rng = rng::stream(seed, "trpo.sampling", iter as u64);
        let batch = gather_batch(&policy, env.as_mut(), k, seed, episode, &mut rng)?;
        episode += k as u64;
        let mean = batch.mean_return();
        for j in 0..batch.len() {
            let ha = action_entropy(&batch.old_action[j]);
            let hx = categorical::entropy(&batch.old_repetition[j]);
            log.record_decision(batch.repetitions[j], ha, hx, 0);
        }
        log.log.primitive_steps += batch.primitive_steps as u64;
        for &r in &batch.episode_returns {
            log.record_episode(r);
        }
        decisions += batch.len() as u64;
        log.flush(decisions);
        if best.is_none() || mean > history[track_best_policy(&history)?] {
            best = Some(policy.clone());
        }
        history.push(mean);
        let (params, step) = trust_region_update(&policy, &batch, config)?;
        policy.set_params(&params)?;
        steps.push(step);
        if record {
            trajectory.push(params);
        }
    }
    let best_index = track_best_policy(&history)?;
    Ok(TrpoOutcome {
        best_policy: best.unwrap_or_else(|| policy.clone()),
        policy,
        best_index,
        history,
        steps,
        log: log.finish(decisions),
        trajectory,
    })
}
