//! Plain trust-region training of a softmax actor over primitive steps.

use super::{track_best_policy, TrpoConfig};
use crate::envs::{Action, ActionSpace, Environment};
use crate::error::{Error, Result};
use crate::numcore::{categorical, conjugate_gradient, Mlp, ParamVector, Trace};
use crate::rng::{self, StreamRng};

#[derive(Clone, Debug, Default)]
pub struct PlainBatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub q: Vec<f64>,
    pub old_logprob: Vec<f64>,
    pub old_probs: Vec<Vec<f64>>,
    pub episode_returns: Vec<f64>,
}

impl PlainBatch {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn mean_return(&self) -> f64 {
        self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct PlainTrpoOutcome {
    pub actor: Mlp<f64>,
    pub best_actor: Mlp<f64>,
    pub best_index: usize,
    pub history: Vec<f64>,
    /// Actor parameters after every update.
    pub trajectory: Vec<Vec<f64>>,
}

pub fn gather_plain_batch(
    actor: &Mlp<f64>,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
    first_episode: u64,
    rng: &mut StreamRng,
) -> Result<PlainBatch> {
    if episodes == 0 {
        return Err(Error::Usage("batch needs at least one episode".into()));
    }
    let gamma = env.spec().discount;
    let mut batch = PlainBatch::default();
    for i in 0..episodes as u64 {
        let mut obs = env.reset(rng::derive_seed(seed, "trpo.episode", first_episode + i));
        let mut rewards = Vec::new();
        let mut ret = 0.0;
        loop {
            let probs = actor.forward(&obs)?;
            let a = categorical::sample(&probs, rng);
            let s = env.step(&Action::Discrete(a))?;
            ret += s.reward;
            rewards.push(s.reward);
            batch.observations.push(std::mem::replace(&mut obs, s.observation));
            batch.actions.push(a);
            batch.old_logprob.push(categorical::log_prob(&probs, a));
            batch.old_probs.push(probs);
            if s.terminal {
                break;
            }
        }
        let mut q = vec![0.0; rewards.len()];
        let mut acc = 0.0;
        for (j, &r) in rewards.iter().enumerate().rev() {
            acc = r + gamma * acc;
            q[j] = acc;
        }
        batch.q.extend(q);
        batch.episode_returns.push(ret);
    }
    Ok(batch)
}

fn traces(actor: &Mlp<f64>, batch: &PlainBatch) -> Result<Vec<Trace<f64>>> {
    batch.observations.iter().map(|o| actor.forward_trace(o)).collect()
}

fn surrogate(actor: &Mlp<f64>, batch: &PlainBatch, traces: &[Trace<f64>], with_grad: bool) -> Result<(f64, ParamVector<f64>)> {
    let n = batch.len() as f64;
    let mut value = 0.0;
    let mut ratios = Vec::with_capacity(traces.len());
    for (j, trace) in traces.iter().enumerate() {
        let r = (categorical::log_prob(trace.output(), batch.actions[j]) - batch.old_logprob[j]).exp();
        value += r * batch.q[j];
        ratios.push(r);
    }
    value /= n;
    let mut grad = ParamVector::zeros(actor.layout().clone());
    if with_grad {
        for (j, (trace, &r)) in traces.iter().zip(&ratios).enumerate() {
            let p = trace.output();
            let mut upstream = vec![0.0; p.len()];
            upstream[batch.actions[j]] = r * batch.q[j] / n / p[batch.actions[j]];
            grad.axpy(1.0, &actor.backward(trace, &upstream)?.params)?;
        }
    }
    Ok((value, grad))
}

fn mean_kl(batch: &PlainBatch, traces: &[Trace<f64>]) -> f64 {
    let total = traces
        .iter()
        .zip(&batch.old_probs)
        .fold(0.0, |acc, (t, old)| acc + categorical::kl(old, t.output()));
    total / batch.len() as f64
}

fn fisher_vector_product(actor: &Mlp<f64>, traces: &[Trace<f64>], damping: f64, v: &[f64]) -> Result<Vec<f64>> {
    let mut out = ParamVector::zeros(actor.layout().clone());
    for trace in traces {
        let jt = actor.jvp(trace, v, None)?;
        let upstream: Vec<f64> = jt.iter().zip(trace.output()).map(|(t, p)| t / p).collect();
        out.axpy(1.0, &actor.backward(trace, &upstream)?.params)?;
    }
    let n = traces.len() as f64;
    Ok(out
        .values()
        .iter()
        .zip(v)
        .map(|(f, vi)| f / n + damping * vi)
        .collect())
}

/// Natural-gradient step on the plain surrogate. Returns the new parameters
/// and whether a step was accepted.
pub fn plain_trust_region_update(actor: &Mlp<f64>, batch: &PlainBatch, config: &TrpoConfig) -> Result<(Vec<f64>, bool)> {
    if batch.is_empty() {
        return Err(Error::Usage("empty surrogate batch".into()));
    }
    let tr = traces(actor, batch)?;
    let (before, grad) = surrogate(actor, batch, &tr, true)?;
    let old = actor.params().values().to_vec();
    if !grad.is_finite() || !before.is_finite() {
        return Err(Error::Numeric("surrogate gradient is not finite".into()));
    }
    let g = grad.values();
    if g.iter().all(|&v| v == 0.0) {
        return Ok((old, false));
    }
    let fvp = |v: &[f64]| fisher_vector_product(actor, &tr, config.cg_damping, v);
    let direction = conjugate_gradient(fvp, g, config.cg_iters, 1e-10)?;
    let curvature: f64 = direction
        .iter()
        .zip(fvp(&direction)?)
        .map(|(d, fd)| d * fd)
        .sum();
    if !(curvature > 0.0) || !curvature.is_finite() {
        return Ok((old, false));
    }
    let full = (2.0 * config.delta / curvature).sqrt();
    let mut fraction = 1.0;
    let mut trial = actor.clone();
    for _ in 0..=config.max_backtracks {
        let candidate: Vec<f64> = old
            .iter()
            .zip(&direction)
            .map(|(p, d)| p + fraction * full * d)
            .collect();
        trial.params_mut().assign(&candidate)?;
        if let Ok(trial_traces) = traces(&trial, batch) {
            let kl = mean_kl(batch, &trial_traces);
            let (after, _) = surrogate(&trial, batch, &trial_traces, false)?;
            if kl <= config.delta && after > before {
                return Ok((candidate, true));
            }
        }
        fraction *= config.backtrack_ratio;
    }
    Ok((old, false))
}

/// Trains a softmax actor (for example from `a3c::plain_actor`) with the
/// same batch schedule as the factored trainer.
pub fn train_plain(config: &TrpoConfig, env: &dyn Environment, actor: Mlp<f64>, seed: u64) -> Result<PlainTrpoOutcome> {
    config.validate()?;
    let ActionSpace::Discrete(_) = env.spec().action_space else {
        return Err(Error::Config("plain trpo needs a discrete action space".into()));
    };
    let mut env = env.boxed_clone();
    let mut actor = actor;
    let mut best = None;
    let mut history: Vec<f64> = Vec::with_capacity(config.improvement_steps);
    let mut episode = 0u64;
    let mut trajectory = Vec::with_capacity(config.improvement_steps);
    for iter in 0..config.improvement_steps {
        let k = config.k_schedule.episodes(&history);
        let mut rng = rng::stream(seed, "trpo.sampling", iter as u64);
        let batch = gather_plain_batch(&actor, env.as_mut(), k, seed, episode, &mut rng)?;
        episode += k as u64;
        let mean = batch.mean_return();
        if best.is_none() || mean > history[track_best_policy(&history)?] {
            best = Some(actor.clone());
        }
        history.push(mean);
        let (params, _) = plain_trust_region_update(&actor, &batch, config)?;
        actor.params_mut().assign(&params)?;
        trajectory.push(params);
    }
    Ok(PlainTrpoOutcome {
        best_actor: best.unwrap_or_else(|| actor.clone()),
        best_index: track_best_policy(&history)?,
        actor,
        history,
        trajectory,
    })
}
