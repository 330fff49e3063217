//! Actor-critic training of a factored policy.
//!
//! Rollouts are counted in decisions: every decision executes one macro-action
//! and increments the shared budget counter once. Returns are discounted by
//! the primitive steps actually elapsed.

mod baseline;
mod train;

pub use baseline::{plain_actor, train_plain, PlainA3cOutcome};
pub use train::{train, train_recording, A3cOutcome};

use serde::{Deserialize, Serialize};

use crate::envs::MacroTransition;
use crate::error::{check_dim, Error, Result};
use crate::numcore::{categorical, Activation, Mlp, OutputTransform, ParamVector};
use crate::policy::{
    action_entropy, action_entropy_grad, action_logprob, action_logprob_grad, categorical_logprob_grad, FactoredPolicy,
    PolicyArch,
};
use crate::rng;

/// How discount exponents accumulate inside an n-step window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnTargets {
    /// `Y(j, k) = Σ_{m=j}^{k-1} elapsed_m`: exact primitive-step discounting.
    #[default]
    Exact,
    /// `y_i = Σ_{m=1}^{i} elapsed_{j+m}`, which skips the first macro's own
    /// duration. A missing trailing duration counts as one step.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct A3cConfig {
    /// Decisions per rollout segment.
    pub n: usize,
    pub entropy_beta: f64,
    /// Initial learning rate, annealed linearly to zero over the budget.
    pub lr: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub total_decision_steps: u64,
    pub warmup_fraction: f64,
    /// Repetition used during warmup; the smallest element of `W` when unset.
    pub warmup_fixed_repetition: Option<usize>,
    pub num_workers: usize,
    pub policy: PolicyArch,
    pub critic_hidden: Vec<usize>,
    pub return_targets: ReturnTargets,
    pub log_interval: u64,
    /// Greedy evaluation every this many decisions (0 disables it).
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub log_wallclock: bool,
}

impl Default for A3cConfig {
    fn default() -> Self {
        Self {
            n: 20,
            entropy_beta: 0.02,
            lr: 1e-3,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-6,
            total_decision_steps: 200_000,
            warmup_fraction: 0.2,
            warmup_fixed_repetition: None,
            num_workers: 1,
            policy: PolicyArch::new(vec![64], Activation::Tanh),
            critic_hidden: vec![64],
            return_targets: ReturnTargets::Exact,
            log_interval: 1000,
            eval_interval: 0,
            eval_episodes: 1,
            log_wallclock: false,
        }
    }
}

impl A3cConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("a3c: {m}")));
        if self.n == 0 {
            return fail("n must be at least 1");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must lie in [0, 1)");
        }
        if self.num_workers == 0 {
            return fail("num_workers must be positive");
        }
        if self.total_decision_steps == 0 {
            return fail("total_decision_steps must be positive");
        }
        if !(self.lr > 0.0) || !(self.entropy_beta >= 0.0) {
            return fail("lr must be positive and entropy_beta non-negative");
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_eps > 0.0) {
            return fail("rmsprop_decay must lie in [0, 1) and rmsprop_eps be positive");
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_decision_steps as f64).floor() as u64
    }
}

/// Up to `n` consecutive decisions from one worker.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutSegment {
    pub transitions: Vec<MacroTransition>,
    /// `V(s_n)`, or 0 when the last transition ended the episode.
    pub bootstrap_value: f64,
}

impl RolloutSegment {
    pub fn new(transitions: Vec<MacroTransition>, bootstrap_value: f64) -> Result<Self> {
        let Some(last) = transitions.last() else {
            return Err(Error::Usage("rollout segment has no transitions".into()));
        };
        if last.terminal && bootstrap_value != 0.0 {
            return Err(Error::Usage("terminal segment must not bootstrap".into()));
        }
        if transitions[..transitions.len() - 1].iter().any(|t| t.terminal) {
            return Err(Error::Usage("only the last transition of a segment may be terminal".into()));
        }
        Ok(Self {
            transitions,
            bootstrap_value,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Value targets `V̂(s_j)` for every decision of the segment.
pub fn smdp_return_targets(segment: &RolloutSegment, gamma: f64, variant: ReturnTargets) -> Vec<f64> {
    let ts = &segment.transitions;
    match variant {
        ReturnTargets::Exact => {
            let mut out = vec![0.0; ts.len()];
            let mut acc = segment.bootstrap_value;
            for (j, t) in ts.iter().enumerate().rev() {
                acc = t.macro_reward + gamma.powi(t.elapsed as i32) * acc;
                out[j] = acc;
            }
            out
        }
        ReturnTargets::Literal => {
            let n = ts.len();
            let duration = |m: usize| if m < n { ts[m].elapsed } else { 1 };
            (0..n)
                .map(|j| {
                    let mut y = 0usize;
                    let mut total = 0.0;
                    for (i, t) in ts[j..].iter().enumerate() {
                        if i > 0 {
                            y += duration(j + i);
                        }
                        total += gamma.powi(y as i32) * t.macro_reward;
                    }
                    y += duration(n);
                    total + gamma.powi(y as i32) * segment.bootstrap_value
                })
                .collect()
        }
    }
}

/// Builds the state-value network: a linear head over `critic_hidden` layers.
pub fn value_network(observation_dim: usize, hidden: &[usize], activation: Activation, seed: u64) -> Result<Mlp<f64>> {
    let sizes: Vec<usize> = std::iter::once(observation_dim)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    Ok(Mlp::new(&sizes, activation, OutputTransform::Linear)?.initialized(&mut rng::stream(seed, "critic", 0), 1.0))
}

/// `-Σ_j (log π_a + log π_x) Â_j - β Σ_j (H_a + H_x)` with `Â_j = V̂_j - V_j`
/// held constant. With `train_repetition = false`, or a single-element `W`,
/// the repetition terms are left out so that head receives no gradient.
pub fn joint_actor_loss(
    policy: &FactoredPolicy<f64>,
    segment: &RolloutSegment,
    targets: &[f64],
    values: &[f64],
    entropy_beta: f64,
    train_repetition: bool,
) -> Result<(f64, ParamVector<f64>)> {
    check_dim("actor targets", segment.len(), targets.len())?;
    check_dim("actor values", segment.len(), values.len())?;
    let use_x = train_repetition && policy.repetition_set().len() > 1;
    let mut loss = 0.0;
    let mut grad = ParamVector::zeros(policy.layout().clone());
    for (j, t) in segment.transitions.iter().enumerate() {
        let eval = policy.evaluate(&t.state)?;
        let adv = targets[j] - values[j];
        let mut logp = action_logprob(&eval.action, &t.action)?;
        let mut entropy = action_entropy(&eval.action);
        let action_grad = match (
            action_logprob_grad(&eval.action, &t.action, -adv)?,
            action_entropy_grad(&eval.action, -entropy_beta),
        ) {
            (Some(a), Some(b)) => Some(a.add(&b)?),
            (a, b) => a.or(b),
        };
        let repetition_grad = if use_x {
            let ix = policy
                .repetition_set()
                .index_of(t.repetition)
                .ok_or_else(|| Error::Config(format!("repetition {} not in set", t.repetition)))?;
            logp += categorical::log_prob(&eval.repetition, ix);
            entropy += categorical::entropy(&eval.repetition);
            let mut g = categorical_logprob_grad(&eval.repetition, ix, -adv);
            for (gi, e) in g.iter_mut().zip(categorical::entropy_grad(&eval.repetition)) {
                *gi += e * -entropy_beta;
            }
            Some(g)
        } else {
            None
        };
        loss -= logp * adv + entropy_beta * entropy;
        let g = policy.backward(&eval, action_grad.as_ref(), repetition_grad.as_deref())?;
        grad.axpy(1.0, &g)?;
    }
    Ok((loss, grad))
}

/// Mean squared error `(1/N) Σ_j (V̂_j - V(s_j))²` and its gradient.
pub fn critic_loss(critic: &Mlp<f64>, segment: &RolloutSegment, targets: &[f64]) -> Result<(f64, ParamVector<f64>)> {
    check_dim("critic targets", segment.len(), targets.len())?;
    let n = segment.len() as f64;
    let mut loss = 0.0;
    let mut grad = ParamVector::zeros(critic.layout().clone());
    for (t, &target) in segment.transitions.iter().zip(targets) {
        let trace = critic.forward_trace(&t.state)?;
        let v = trace.output()[0];
        loss += (target - v).powi(2) / n;
        let g = critic.backward(&trace, &[-2.0 * (target - v) / n])?;
        grad.axpy(1.0, &g.params)?;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests;
