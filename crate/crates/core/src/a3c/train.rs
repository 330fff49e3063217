use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{critic_loss, joint_actor_loss, smdp_return_targets, A3cConfig, RolloutSegment};
use crate::envs::{execute_macro, Environment};
use crate::error::{Error, Result};
use crate::numcore::{categorical, DiagGaussian, Layout, LinearAnneal, Mlp, ParamVector, SharedParams, SharedRmsProp};
use crate::oracle::evaluate_policy;
use crate::policy::{Decision, FactoredPolicy, SamplingMode};
use crate::rng;
use crate::trainlog::{EvalSnapshot, LogAccumulator, TrainingLog};

#[derive(Clone, Debug)]
pub struct A3cOutcome {
    pub policy: FactoredPolicy<f64>,
    pub critic: Mlp<f64>,
    pub log: TrainingLog,
    /// Concatenated `[policy | critic]` parameters after every update, when recorded.
    pub trajectory: Vec<Vec<f64>>,
}

/// State shared by all workers of one run.
struct Shared<'a> {
    config: &'a A3cConfig,
    seed: u64,
    gamma: f64,
    warmup_x: usize,
    policy_len: usize,
    params: SharedParams,
    optimizer: SharedRmsProp,
    counter: AtomicU64,
    log: Mutex<LogAccumulator>,
    trajectory: Option<Mutex<Vec<Vec<f64>>>>,
}

fn decision_entropy(policy: &FactoredPolicy<f64>, d: &Decision<f64>) -> (f64, f64) {
    let ha = match &d.action_probs {
        Some(p) => categorical::entropy(p),
        None if !policy.log_std().is_empty() => DiagGaussian::new(vec![0.0; policy.log_std().len()], policy.log_std().to_vec())
            .map_or(0.0, |g| g.entropy()),
        None => 0.0,
    };
    (ha, categorical::entropy(&d.repetition_probs))
}

/// Trains `policy` and `critic` for `config.total_decision_steps` decisions.
pub fn train(
    config: &A3cConfig,
    env: &dyn Environment,
    policy: FactoredPolicy<f64>,
    critic: Mlp<f64>,
    seed: u64,
) -> Result<A3cOutcome> {
    run(config, env, policy, critic, seed, false)
}

/// Like [`train`], additionally recording the parameters after every update.
pub fn train_recording(
    config: &A3cConfig,
    env: &dyn Environment,
    policy: FactoredPolicy<f64>,
    critic: Mlp<f64>,
    seed: u64,
) -> Result<A3cOutcome> {
    run(config, env, policy, critic, seed, true)
}

fn run(
    config: &A3cConfig,
    env: &dyn Environment,
    policy: FactoredPolicy<f64>,
    critic: Mlp<f64>,
    seed: u64,
    record: bool,
) -> Result<A3cOutcome> {
    config.validate()?;
    let set = policy.repetition_set().clone();
    let warmup_x = config.warmup_fixed_repetition.unwrap_or(set.values()[0]);
    if !set.contains(warmup_x) {
        return Err(Error::Config(format!("warmup repetition {warmup_x} not in {:?}", set.values())));
    }
    let layout = Layout::concat([("policy", policy.layout()), ("critic", critic.layout())])?;
    let mut init = policy.params().into_values();
    init.extend_from_slice(critic.params().values());
    let start = ParamVector::new(layout, init)?;
    let shared = Shared {
        config,
        seed,
        gamma: env.spec().discount,
        warmup_x,
        policy_len: policy.layout().total(),
        params: SharedParams::new(&start),
        optimizer: SharedRmsProp::new(
            start.len(),
            config.rmsprop_decay,
            config.rmsprop_eps,
            LinearAnneal::to_zero(config.lr, config.total_decision_steps),
        ),
        counter: AtomicU64::new(0),
        log: Mutex::new(LogAccumulator::new(config.log_interval, config.log_wallclock)),
        trajectory: record.then(|| Mutex::new(Vec::new())),
    };
    if config.num_workers == 1 {
        worker(&shared, 0, env.boxed_clone(), policy.clone(), critic.clone())?;
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..config.num_workers)
                .map(|w| {
                    let (env, policy, critic, shared) = (env.boxed_clone(), policy.clone(), critic.clone(), &shared);
                    scope.spawn(move || worker(shared, w, env, policy, critic))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("a3c worker panicked"))
                .collect::<Result<Vec<()>>>()
        })?;
    }
    let end = shared.counter.load(Ordering::SeqCst).min(config.total_decision_steps);
    let final_params: ParamVector<f64> = shared.params.snapshot();
    let (p, c) = final_params.values().split_at(shared.policy_len);
    let mut policy = policy;
    policy.set_params(p)?;
    let mut critic = critic;
    critic.params_mut().assign(c)?;
    Ok(A3cOutcome {
        policy,
        critic,
        log: shared.log.into_inner().expect("log lock poisoned").finish(end),
        trajectory: shared
            .trajectory
            .map(|t| t.into_inner().expect("trajectory lock poisoned"))
            .unwrap_or_default(),
    })
}

fn worker(
    shared: &Shared<'_>,
    id: usize,
    mut env: Box<dyn Environment>,
    mut policy: FactoredPolicy<f64>,
    mut critic: Mlp<f64>,
) -> Result<()> {
    let cfg = shared.config;
    let budget = cfg.total_decision_steps;
    let set = policy.repetition_set().clone();
    let mut rng = rng::stream(shared.seed, "a3c.worker", id as u64);
    let episode_seed = |ep: u64| rng::derive_seed(shared.seed, "a3c.episode", ((id as u64) << 32) | ep);
    let mut episode = 0u64;
    let mut obs = env.reset(episode_seed(episode));
    let mut episode_return = 0.0;
    let mut next_eval = cfg.eval_interval;
    loop {
        if shared.counter.load(Ordering::SeqCst) >= budget {
            return Ok(());
        }
        let snapshot: ParamVector<f64> = shared.params.snapshot();
        let (p, c) = snapshot.values().split_at(shared.policy_len);
        policy.set_params(p)?;
        critic.params_mut().assign(c)?;
        let warmup = shared.counter.load(Ordering::SeqCst) < cfg.warmup_steps();
        let forced = warmup.then_some(shared.warmup_x);

        let mut transitions = Vec::with_capacity(cfg.n);
        while transitions.len() < cfg.n {
            let step = shared.counter.fetch_add(1, Ordering::SeqCst);
            if step >= budget {
                break;
            }
            let d = policy.decide_with(&obs, SamplingMode::Stochastic, &mut rng, forced)?;
            let t = execute_macro(env.as_mut(), &d.action, d.repetition, &set, shared.gamma)?;
            episode_return += t.undiscounted_reward();
            let (ha, hx) = decision_entropy(&policy, &d);
            let terminal = t.terminal;
            obs = t.next_state.clone();
            transitions.push(t);
            let mut log = shared.log.lock().expect("log lock poisoned");
            log.record_decision(d.repetition, ha, hx, transitions.last().map_or(0, |t| t.elapsed));
            if terminal {
                log.record_episode(episode_return);
            }
            log.maybe_emit(step + 1);
            drop(log);
            if terminal {
                episode += 1;
                episode_return = 0.0;
                obs = env.reset(episode_seed(episode));
                break;
            }
        }
        if transitions.is_empty() {
            return Ok(());
        }
        let last = transitions.last().expect("non-empty");
        let bootstrap = if last.terminal {
            0.0
        } else {
            critic.forward(&last.next_state)?[0]
        };
        let segment = RolloutSegment::new(transitions, bootstrap)?;
        let targets = smdp_return_targets(&segment, shared.gamma, cfg.return_targets);
        let values = segment
            .transitions
            .iter()
            .map(|t| critic.forward(&t.state).map(|v| v[0]))
            .collect::<Result<Vec<f64>>>()?;
        let (_, actor_grad) = joint_actor_loss(&policy, &segment, &targets, &values, cfg.entropy_beta, !warmup)?;
        let (_, critic_grad) = critic_loss(&critic, &segment, &targets)?;
        let mut grad = actor_grad.into_values();
        grad.extend_from_slice(critic_grad.values());
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("a3c gradient is not finite".into()));
        }
        let step = shared.counter.load(Ordering::SeqCst).min(budget);
        shared.optimizer.apply(&shared.params, &grad, step)?;
        if let Some(traj) = &shared.trajectory {
            let now: ParamVector<f64> = shared.params.snapshot();
            traj.lock().expect("trajectory lock poisoned").push(now.into_values());
        }
        if id == 0 && cfg.eval_interval > 0 && step >= next_eval {
            while next_eval <= step {
                next_eval += cfg.eval_interval;
            }
            let now: ParamVector<f64> = shared.params.snapshot();
            let current = policy.with_params(&now.values()[..shared.policy_len])?;
            let mut eval_env = env.boxed_clone();
            let ev = evaluate_policy(
                &current,
                eval_env.as_mut(),
                cfg.eval_episodes.max(1),
                SamplingMode::Greedy,
                rng::derive_seed(shared.seed, "a3c.eval", step),
            )?;
            shared.log.lock().expect("log lock poisoned").evaluation(EvalSnapshot::new(step, &ev));
        }
    }
}
