//! Off-policy deterministic actor-critic over factored policies.
//!
//! The actor is a [`FactoredPolicy`] with a deterministic action head; the
//! critic scores `(s, a, x)` where `x` is a distribution over `W` (one-hot
//! for replayed decisions, the repetition head's softmax when differentiating
//! the actor). Actions and repetitions enter the critic at its second layer.

mod baseline;
mod train;

pub use baseline::{plain_actor, train_plain, PlainDdpgOutcome};
pub use train::{train, train_recording, DdpgOutcome};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::Action;
use crate::error::{check_dim, Error, Result};
use crate::numcore::{categorical, Activation, Layout, Mlp, OutputTransform, ParamVector, Scalar, Trace};
use crate::policy::{ActionDist, ActionGrad, FactoredPolicy, PolicyArch};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub replay_capacity: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub ou_mu: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_steps: u64,
    pub total_train_steps: u64,
    pub policy: PolicyArch,
    pub critic_hidden: Vec<usize>,
    pub log_interval: u64,
    pub log_wallclock: bool,
    /// Greedy evaluation every this many steps; 0 disables.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// End training at the first evaluation whose success rate reaches this.
    pub stop_at_success: Option<f64>,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            replay_capacity: 10_000,
            tau: 0.001,
            batch_size: 64,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            ou_mu: 0.0,
            eps_start: 0.2,
            eps_end: 0.0,
            eps_steps: 50_000,
            total_train_steps: 40_000,
            policy: PolicyArch::new(vec![64, 64], Activation::Relu),
            critic_hidden: vec![64, 64],
            log_interval: 1000,
            log_wallclock: false,
            eval_interval: 0,
            eval_episodes: 10,
            stop_at_success: None,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("ddpg: {m}")));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail("tau must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return fail("need 1 <= batch_size <= replay_capacity");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return fail("learning rates must be positive");
        }
        if !(self.ou_theta >= 0.0 && self.ou_sigma >= 0.0) {
            return fail("OU parameters must be non-negative");
        }
        for e in [self.eps_start, self.eps_end] {
            if !(0.0..=1.0).contains(&e) {
                return fail("epsilon must lie in [0, 1]");
            }
        }
        if self.stop_at_success.is_some() && self.eval_interval == 0 {
            return fail("stop_at_success needs eval_interval > 0");
        }
        if self.critic_hidden.is_empty() {
            return fail("critic needs a hidden layer");
        }
        Ok(())
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.eps_start,
            end: self.eps_end,
            steps: self.eps_steps,
        }
    }
}

/// Linear anneal from `start` to `end` over `steps`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.steps {
            return self.end;
        }
        self.start + (self.end - self.start) * (step as f64 / self.steps as f64)
    }
}

/// Ornstein-Uhlenbeck process, one coordinate per action dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    pub mu: f64,
    pub state: Vec<f64>,
}

impl OuNoise {
    pub fn new(dim: usize, theta: f64, sigma: f64, mu: f64) -> Self {
        Self {
            theta,
            sigma,
            mu,
            state: vec![mu; dim],
        }
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|n| *n = self.mu);
    }

    /// Advances one step: `n ← n + θ(μ − n) + σ·N(0, 1)`.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        for n in &mut self.state {
            let z: f64 = rng.sample(StandardNormal);
            *n += self.theta * (self.mu - *n) + self.sigma * z;
        }
        &self.state
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayEntry {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    /// One-hot over `W`.
    pub repetition: Vec<f64>,
    pub reward: f64,
    pub elapsed: usize,
    pub next_state: Vec<f64>,
    /// The episode ended in a terminal state (timeouts still bootstrap).
    pub terminal: bool,
}

pub fn one_hot(len: usize, index: usize) -> Result<Vec<f64>> {
    if index >= len {
        return Err(Error::Usage(format!("one-hot index {index} out of {len}")));
    }
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    Ok(v)
}

/// Fixed-capacity FIFO ring.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<ReplayEntry>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            entries: Vec::with_capacity(capacity),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, entry: ReplayEntry) -> Result<()> {
        if entry.repetition.iter().filter(|&&v| v == 1.0).count() != 1
            || entry.repetition.iter().any(|&v| v != 0.0 && v != 1.0)
        {
            return Err(Error::Usage("replayed repetition must be one-hot".into()));
        }
        if entry.elapsed == 0 {
            return Err(Error::Usage("replayed macro must take at least one step".into()));
        }
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else {
            self.entries[self.next] = entry;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Entries in insertion order, oldest first.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &ReplayEntry> {
        let split = if self.entries.len() < self.capacity { 0 } else { self.next };
        self.entries[split..].iter().chain(&self.entries[..split])
    }

    /// Uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&ReplayEntry>> {
        if self.entries.is_empty() {
            return Err(Error::Usage("sampling an empty replay buffer".into()));
        }
        Ok((0..batch)
            .map(|_| &self.entries[rng.random_range(0..self.entries.len())])
            .collect())
    }
}

/// `Q(s, a, x)`: the state passes through the first layer alone; its output
/// is joined with `a` and `x` before the remaining layers.
#[derive(Clone, Debug)]
pub struct Critic<T> {
    lower: Mlp<T>,
    upper: Mlp<T>,
    action_dim: usize,
    repetition_dim: usize,
    layout: Layout,
}

#[derive(Clone, Debug)]
pub struct CriticTrace<T> {
    lower: Trace<T>,
    upper: Trace<T>,
}

impl<T: Scalar> CriticTrace<T> {
    pub fn value(&self) -> &T {
        &self.upper.output()[0]
    }
}

#[derive(Clone, Debug)]
pub struct CriticGrad<T> {
    pub params: ParamVector<T>,
    pub state: Vec<T>,
    pub action: Vec<T>,
    pub repetition: Vec<T>,
}

impl<T: Scalar> Critic<T> {
    /// `repetition_dim = 0` builds a critic without repetition inputs.
    pub fn new(
        observation_dim: usize,
        action_dim: usize,
        repetition_dim: usize,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let Some((&first, rest)) = hidden.split_first() else {
            return Err(Error::Config("critic needs a hidden layer".into()));
        };
        let lower = Mlp::new(&[observation_dim, first], activation, OutputTransform::Hidden(activation))?
            .initialized(&mut rng::stream(seed, "ddpg.critic.lower", 0), 1.0);
        let sizes: Vec<usize> = std::iter::once(first + action_dim + repetition_dim)
            .chain(rest.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let upper = Mlp::new(&sizes, activation, OutputTransform::Linear)?
            .initialized(&mut rng::stream(seed, "ddpg.critic.upper", 0), 1.0);
        let layout = Layout::concat([("lower", lower.layout()), ("upper", upper.layout())])?;
        Ok(Self {
            lower,
            upper,
            action_dim,
            repetition_dim,
            layout,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn repetition_dim(&self) -> usize {
        self.repetition_dim
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> ParamVector<T> {
        let mut v = self.lower.params().values().to_vec();
        v.extend_from_slice(self.upper.params().values());
        ParamVector::new(self.layout.clone(), v).expect("layout matches")
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        check_dim("critic parameters", self.layout.total(), values.len())?;
        let (l, u) = values.split_at(self.lower.params().len());
        self.lower.params_mut().assign(l)?;
        self.upper.params_mut().assign(u)
    }

    pub fn with_params(&self, values: &[T]) -> Result<Self> {
        let mut c = self.clone();
        c.set_params(values)?;
        Ok(c)
    }

    pub fn forward_trace(&self, state: &[T], action: &[T], repetition: &[T]) -> Result<CriticTrace<T>> {
        check_dim("critic action", self.action_dim, action.len())?;
        check_dim("critic repetition", self.repetition_dim, repetition.len())?;
        let lower = self.lower.forward_trace(state)?;
        let mut joined = lower.output().to_vec();
        joined.extend_from_slice(action);
        joined.extend_from_slice(repetition);
        let upper = self.upper.forward_trace(&joined)?;
        Ok(CriticTrace { lower, upper })
    }

    pub fn value(&self, state: &[T], action: &[T], repetition: &[T]) -> Result<T> {
        Ok(*self.forward_trace(state, action, repetition)?.value())
    }

    /// Gradients of `upstream · Q` w.r.t. parameters and all inputs.
    pub fn backward(&self, trace: &CriticTrace<T>, upstream: T) -> Result<CriticGrad<T>> {
        let up = self.upper.backward(&trace.upper, &[upstream])?;
        let h = self.lower.output_dim();
        let (dh, rest) = up.input.split_at(h);
        let (da, dx) = rest.split_at(self.action_dim);
        let low = self.lower.backward(&trace.lower, dh)?;
        let mut params = low.params.into_values();
        params.extend_from_slice(up.params.values());
        Ok(CriticGrad {
            params: ParamVector::new(self.layout.clone(), params)?,
            state: low.input,
            action: da.to_vec(),
            repetition: dx.to_vec(),
        })
    }

    /// The slice of a repetition vector this critic consumes.
    pub fn repetition_input<'a>(&self, repetition: &'a [T]) -> &'a [T] {
        if self.repetition_dim == 0 {
            &[]
        } else {
            repetition
        }
    }
}

/// `θ_target ← τ·θ_live + (1 − τ)·θ_target`.
pub fn soft_update<T: Scalar>(target: &mut ParamVector<T>, live: &ParamVector<T>, tau: T) -> Result<()> {
    target.check_layout(live)?;
    for (t, &l) in target.values_mut().iter_mut().zip(live.values()) {
        *t = tau * l + (T::one() - tau) * *t;
    }
    Ok(())
}

/// Shadow copies used for bootstrapped critic targets.
#[derive(Clone, Debug)]
pub struct TargetNets {
    pub actor: FactoredPolicy<f64>,
    pub critic: Critic<f64>,
}

impl TargetNets {
    pub fn new(actor: &FactoredPolicy<f64>, critic: &Critic<f64>) -> Self {
        Self {
            actor: actor.clone(),
            critic: critic.clone(),
        }
    }

    pub fn soft_update(&mut self, actor: &FactoredPolicy<f64>, critic: &Critic<f64>, tau: f64) -> Result<()> {
        let mut a = self.actor.params();
        soft_update(&mut a, &actor.params(), tau)?;
        self.actor.set_params(a.values())?;
        let mut c = self.critic.params();
        soft_update(&mut c, &critic.params(), tau)?;
        self.critic.set_params(c.values())
    }
}

fn deterministic_output(eval_action: &ActionDist<f64>) -> Result<&[f64]> {
    match eval_action {
        ActionDist::Deterministic(m) => Ok(m),
        _ => Err(Error::Usage("ddpg needs a deterministic action head".into())),
    }
}

/// Actor output at `state`: `(μ(s), f_x(s))`.
pub fn actor_output(actor: &FactoredPolicy<f64>, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let eval = actor.evaluate(state)?;
    Ok((deterministic_output(&eval.action)?.to_vec(), eval.repetition))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exploration {
    pub action: Action,
    /// Executed (noisy, clipped) action vector.
    pub vector: Vec<f64>,
    pub repetition: usize,
    pub repetition_index: usize,
    pub repetition_probs: Vec<f64>,
}

/// Noisy action plus ε-greedy repetition: with probability `epsilon` the
/// repetition head's argmax, otherwise a draw from it.
pub fn act_explore<R: Rng + ?Sized>(
    actor: &FactoredPolicy<f64>,
    state: &[f64],
    epsilon: f64,
    bounds: (&[f64], &[f64]),
    noise: &mut OuNoise,
    rng: &mut R,
) -> Result<Exploration> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Usage(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let (mu, probs) = actor_output(actor, state)?;
    check_dim("noise", mu.len(), noise.state.len())?;
    let n = noise.sample(rng);
    let vector: Vec<f64> = mu
        .iter()
        .zip(n)
        .zip(bounds.0.iter().zip(bounds.1))
        .map(|((m, z), (&lo, &hi))| (m + z).clamp(lo, hi))
        .collect();
    let index = if probs.len() == 1 {
        0
    } else if rng.random::<f64>() < epsilon {
        categorical::argmax(&probs)
    } else {
        categorical::sample(&probs, rng)
    };
    Ok(Exploration {
        action: Action::Continuous(vector.clone()),
        vector,
        repetition: actor.repetition_set().values()[index],
        repetition_index: index,
        repetition_probs: probs,
    })
}

/// Bootstrapped targets `r + (1 − terminal)·γ^elapsed·Q'(s', μ'(s'), f'_x(s'))`.
/// `target_policy` maps a state to the target actor's `(action, repetition)` output.
pub fn critic_targets(
    batch: &[&ReplayEntry],
    target_critic: &Critic<f64>,
    target_policy: impl Fn(&[f64]) -> Result<(Vec<f64>, Vec<f64>)>,
    gamma: f64,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|e| {
            if e.terminal {
                return Ok(e.reward);
            }
            let (a, x) = target_policy(&e.next_state)?;
            let q = target_critic.value(&e.next_state, &a, target_critic.repetition_input(&x))?;
            Ok(e.reward + gamma.powi(e.elapsed as i32) * q)
        })
        .collect()
}

/// Mean squared TD error and its gradient w.r.t. the critic parameters.
pub fn critic_loss(critic: &Critic<f64>, batch: &[&ReplayEntry], targets: &[f64]) -> Result<(f64, ParamVector<f64>)> {
    check_dim("critic targets", batch.len(), targets.len())?;
    if batch.is_empty() {
        return Err(Error::Usage("empty critic batch".into()));
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = ParamVector::zeros(critic.layout().clone());
    for (e, &y) in batch.iter().zip(targets) {
        let trace = critic.forward_trace(&e.state, &e.action, critic.repetition_input(&e.repetition))?;
        let err = y - *trace.value();
        loss += err * err;
        grad.axpy(1.0, &critic.backward(&trace, -2.0 * err / n)?.params)?;
    }
    Ok((loss / n, grad))
}

/// `−mean_s Q(s, μ(s), f_x(s))` and its gradient w.r.t. the actor parameters,
/// chained through the critic's action and repetition inputs.
pub fn actor_loss(actor: &FactoredPolicy<f64>, critic: &Critic<f64>, states: &[&[f64]]) -> Result<(f64, ParamVector<f64>)> {
    if states.is_empty() {
        return Err(Error::Usage("empty actor batch".into()));
    }
    let n = states.len() as f64;
    let mut total = 0.0;
    let mut grad = ParamVector::zeros(actor.layout().clone());
    for s in states {
        let eval = actor.evaluate(s)?;
        let mu = deterministic_output(&eval.action)?;
        let trace = critic.forward_trace(s, mu, critic.repetition_input(&eval.repetition))?;
        total += *trace.value();
        let g = critic.backward(&trace, -1.0 / n)?;
        let ag = ActionGrad::Deterministic(g.action);
        let rg = (critic.repetition_dim() > 0).then_some(g.repetition);
        grad.axpy(1.0, &actor.backward(&eval, Some(&ag), rg.as_deref())?)?;
    }
    Ok((-total / n, grad))
}
