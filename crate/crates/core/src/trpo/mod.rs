//! Trust-region training of a factored policy.
//!
//! The surrogate couples an action factor `L_a` and a repetition factor `L_x`
//! either as `L_a · L_x^β_ar` or, when a factor is not positive, as
//! `L_a + β_ar · L_x`. Steps solve `(F + λI) d = g` by conjugate gradient with
//! an exact Fisher-vector product of the combined KL, then backtrack.

mod baseline;
mod train;

pub use baseline::{gather_plain_batch, plain_trust_region_update, train_plain, PlainBatch, PlainTrpoOutcome};
pub use train::{gather_batch, train, train_recording, TrpoOutcome};

use serde::{Deserialize, Serialize};

use crate::envs::Action;
use crate::error::{check_dim, Error, Result};
use crate::numcore::{categorical, conjugate_gradient, Activation, ParamVector};
use crate::policy::{
    action_logprob, action_logprob_grad, categorical_logprob_grad, ActionDist, ActionGrad, FactoredPolicy, PolicyArch,
    PolicyEval,
};

/// Requested coupling of the two surrogate factors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    #[default]
    Product,
    Additive,
}

/// Coupling actually used for one update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateForm {
    Product,
    /// Fallback when a factor is not positive at the old parameters.
    Additive,
    /// Single-element `W`: the repetition factor is constant and dropped.
    ActionOnly,
}

/// Number of episodes per batch, interpolated linearly from `k_max` at the
/// lowest observed average return down to `k_min` at the highest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KSchedule {
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for KSchedule {
    fn default() -> Self {
        Self { k_min: 5, k_max: 50 }
    }
}

impl KSchedule {
    pub fn episodes_for(&self, ret: f64, low: f64, high: f64) -> usize {
        if !(high > low) || !ret.is_finite() {
            return self.k_max;
        }
        let frac = ((ret - low) / (high - low)).clamp(0.0, 1.0);
        let k = self.k_max as f64 - frac * (self.k_max - self.k_min) as f64;
        (k.round() as usize).clamp(self.k_min, self.k_max)
    }

    /// Episodes for the next batch given the average returns seen so far.
    pub fn episodes(&self, history: &[f64]) -> usize {
        let Some(&last) = history.last() else {
            return self.k_max;
        };
        let low = history.iter().copied().fold(f64::INFINITY, f64::min);
        let high = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.episodes_for(last, low, high)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrpoConfig {
    pub beta_ar: f64,
    /// Defaults to 0.64, or 0.16 with a shared trunk.
    pub beta_kl: Option<f64>,
    pub delta: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
    pub improvement_steps: usize,
    pub k_schedule: KSchedule,
    pub surrogate: SurrogateKind,
    pub policy: PolicyArch,
    pub log_wallclock: bool,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            beta_ar: 1.28,
            beta_kl: None,
            delta: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_ratio: 0.5,
            max_backtracks: 10,
            improvement_steps: 500,
            k_schedule: KSchedule::default(),
            surrogate: SurrogateKind::Product,
            policy: PolicyArch::new(vec![128, 64], Activation::Tanh),
            log_wallclock: false,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("trpo: {m}")));
        if !(self.beta_ar > 0.0) {
            return fail("beta_ar must be positive");
        }
        if !(self.delta > 0.0) {
            return fail("delta must be positive");
        }
        if self.beta_kl.is_some_and(|b| !(b >= 0.0)) {
            return fail("beta_kl must be non-negative");
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return fail("backtrack_ratio must lie in (0, 1)");
        }
        if self.cg_iters == 0 || !(self.cg_damping >= 0.0) {
            return fail("cg_iters must be positive and cg_damping non-negative");
        }
        if self.improvement_steps == 0 {
            return fail("improvement_steps must be positive");
        }
        if self.k_schedule.k_min == 0 || self.k_schedule.k_min > self.k_schedule.k_max {
            return fail("k schedule needs 1 <= k_min <= k_max");
        }
        Ok(())
    }

    pub fn beta_kl(&self) -> f64 {
        self.beta_kl
            .unwrap_or(if self.policy.shared_trunk { 0.16 } else { 0.64 })
    }
}

/// Decisions gathered under the old policy, with frozen head outputs.
#[derive(Clone, Debug, Default)]
pub struct SurrogateBatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub repetitions: Vec<usize>,
    pub repetition_indices: Vec<usize>,
    /// Empirical SMDP-discounted return-to-go from each decision.
    pub q: Vec<f64>,
    pub old_logprob_a: Vec<f64>,
    pub old_logprob_x: Vec<f64>,
    pub old_action: Vec<ActionDist<f64>>,
    pub old_repetition: Vec<Vec<f64>>,
    /// Undiscounted return of each episode in the batch.
    pub episode_returns: Vec<f64>,
    pub primitive_steps: usize,
}

impl SurrogateBatch {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::Usage("empty surrogate batch".into()));
        }
        for len in [
            self.actions.len(),
            self.repetitions.len(),
            self.repetition_indices.len(),
            self.q.len(),
            self.old_logprob_a.len(),
            self.old_logprob_x.len(),
            self.old_action.len(),
            self.old_repetition.len(),
        ] {
            check_dim("surrogate batch", n, len)?;
        }
        Ok(())
    }

    pub fn mean_return(&self) -> f64 {
        self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
    }

    pub fn mean_repetition(&self) -> f64 {
        self.repetitions.iter().sum::<usize>() as f64 / self.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct Surrogate {
    pub value: f64,
    pub grad: ParamVector<f64>,
    pub form: SurrogateForm,
    pub l_a: f64,
    pub l_x: f64,
}

/// Picks the coupling at the old parameters, where both factors equal `E[Q̂]`.
pub fn resolve_form(policy: &FactoredPolicy<f64>, batch: &SurrogateBatch, kind: SurrogateKind) -> SurrogateForm {
    if policy.repetition_set().len() == 1 {
        return SurrogateForm::ActionOnly;
    }
    let mean_q = batch.q.iter().sum::<f64>() / batch.q.len() as f64;
    match kind {
        SurrogateKind::Product if mean_q > 0.0 => SurrogateForm::Product,
        _ => SurrogateForm::Additive,
    }
}

fn evaluate_all(policy: &FactoredPolicy<f64>, batch: &SurrogateBatch) -> Result<Vec<PolicyEval<f64>>> {
    batch.observations.iter().map(|o| policy.evaluate(o)).collect()
}

/// Surrogate objective and its gradient at `policy`. In product form a
/// non-positive factor yields a value of `-∞` and a zero gradient.
pub fn factored_surrogate(
    policy: &FactoredPolicy<f64>,
    batch: &SurrogateBatch,
    beta_ar: f64,
    form: SurrogateForm,
) -> Result<Surrogate> {
    batch.validate()?;
    let evals = evaluate_all(policy, batch)?;
    surrogate_from(policy, batch, &evals, beta_ar, form, true)
}

fn surrogate_from(
    policy: &FactoredPolicy<f64>,
    batch: &SurrogateBatch,
    evals: &[PolicyEval<f64>],
    beta_ar: f64,
    form: SurrogateForm,
    with_grad: bool,
) -> Result<Surrogate> {
    let n = batch.len() as f64;
    let use_x = form != SurrogateForm::ActionOnly;
    let mut ratios = Vec::with_capacity(evals.len());
    let (mut l_a, mut l_x) = (0.0, 0.0);
    for (j, eval) in evals.iter().enumerate() {
        let ra = (action_logprob(&eval.action, &batch.actions[j])? - batch.old_logprob_a[j]).exp();
        let rx = if use_x {
            (categorical::log_prob(&eval.repetition, batch.repetition_indices[j]) - batch.old_logprob_x[j]).exp()
        } else {
            1.0
        };
        l_a += ra * batch.q[j];
        l_x += rx * batch.q[j];
        ratios.push((ra, rx));
    }
    l_a /= n;
    l_x /= n;
    let mut grad = ParamVector::zeros(policy.layout().clone());
    let (value, c_a, c_x) = match form {
        SurrogateForm::ActionOnly => (l_a, 1.0, 0.0),
        SurrogateForm::Additive => (l_a + beta_ar * l_x, 1.0, beta_ar),
        SurrogateForm::Product if l_a > 0.0 && l_x > 0.0 => (
            l_a * l_x.powf(beta_ar),
            l_x.powf(beta_ar),
            beta_ar * l_a * l_x.powf(beta_ar - 1.0),
        ),
        SurrogateForm::Product => {
            return Ok(Surrogate {
                value: f64::NEG_INFINITY,
                grad,
                form,
                l_a,
                l_x,
            })
        }
    };
    if with_grad {
        for (j, (eval, &(ra, rx))) in evals.iter().zip(&ratios).enumerate() {
            let ag = action_logprob_grad(&eval.action, &batch.actions[j], c_a * ra * batch.q[j] / n)?;
            let rg = use_x.then(|| {
                categorical_logprob_grad(&eval.repetition, batch.repetition_indices[j], c_x * rx * batch.q[j] / n)
            });
            let g = policy.backward(eval, ag.as_ref(), rg.as_deref())?;
            grad.axpy(1.0, &g)?;
        }
    }
    Ok(Surrogate {
        value,
        grad,
        form,
        l_a,
        l_x,
    })
}

fn action_kl(old: &ActionDist<f64>, new: &ActionDist<f64>) -> Result<f64> {
    match (old, new) {
        (ActionDist::Categorical(p), ActionDist::Categorical(q)) => Ok(categorical::kl(p, q)),
        (ActionDist::Gaussian(p), ActionDist::Gaussian(q)) => Ok(p.kl(q)),
        _ => Err(Error::Usage("trust region needs a stochastic action head".into())),
    }
}

/// `(mean, max)` over batch states of `KL(π_a,old ‖ π_a) + β_KL · KL(π_x,old ‖ π_x)`.
pub fn combined_kl(policy: &FactoredPolicy<f64>, batch: &SurrogateBatch, beta_kl: f64) -> Result<(f64, f64)> {
    let evals = evaluate_all(policy, batch)?;
    kl_from(policy, batch, &evals, beta_kl)
}

fn kl_from(
    policy: &FactoredPolicy<f64>,
    batch: &SurrogateBatch,
    evals: &[PolicyEval<f64>],
    beta_kl: f64,
) -> Result<(f64, f64)> {
    let use_x = policy.repetition_set().len() > 1;
    let (mut ka, mut kx, mut max) = (0.0, 0.0, 0.0f64);
    for (j, eval) in evals.iter().enumerate() {
        let a = action_kl(&batch.old_action[j], &eval.action)?;
        let x = if use_x {
            categorical::kl(&batch.old_repetition[j], &eval.repetition)
        } else {
            0.0
        };
        ka += a;
        kx += x;
        max = max.max(a + beta_kl * x);
    }
    let n = batch.len() as f64;
    let mean = if use_x { ka / n + beta_kl * (kx / n) } else { ka / n };
    Ok((mean, max))
}

/// Gradient of the mean combined KL w.r.t. the new policy's parameters.
pub fn combined_kl_grad(policy: &FactoredPolicy<f64>, batch: &SurrogateBatch, beta_kl: f64) -> Result<ParamVector<f64>> {
    let n = batch.len() as f64;
    let use_x = policy.repetition_set().len() > 1;
    let mut grad = ParamVector::zeros(policy.layout().clone());
    for (j, obs) in batch.observations.iter().enumerate() {
        let eval = policy.evaluate(obs)?;
        let ag = match (&batch.old_action[j], &eval.action) {
            (ActionDist::Categorical(p), ActionDist::Categorical(q)) => ActionGrad::Categorical(
                categorical::kl_grad_new(p, q).into_iter().map(|g| g / n).collect(),
            ),
            (ActionDist::Gaussian(p), ActionDist::Gaussian(q)) => {
                let (dm, dls) = p.kl_grad_other(q);
                ActionGrad::Gaussian {
                    mean: dm.into_iter().map(|g| g / n).collect(),
                    log_std: dls.into_iter().map(|g| g / n).collect(),
                }
            }
            _ => return Err(Error::Usage("trust region needs a stochastic action head".into())),
        };
        let rg: Option<Vec<f64>> = use_x.then(|| {
            categorical::kl_grad_new(&batch.old_repetition[j], &eval.repetition)
                .into_iter()
                .map(|g| beta_kl * g / n)
                .collect()
        });
        let g = policy.backward(&eval, Some(&ag), rg.as_deref())?;
        grad.axpy(1.0, &g)?;
    }
    Ok(grad)
}

/// `(F + damping·I) v` where `F` is the Hessian of the mean combined KL at
/// the parameters the evaluations were taken at.
fn fisher_vector_product(
    policy: &FactoredPolicy<f64>,
    evals: &[PolicyEval<f64>],
    beta_kl: f64,
    damping: f64,
    v: &[f64],
) -> Result<Vec<f64>> {
    let use_x = policy.repetition_set().len() > 1;
    let mut out = ParamVector::zeros(policy.layout().clone());
    for eval in evals {
        let jt = policy.jvp(eval, v)?;
        let ag = match &eval.action {
            ActionDist::Categorical(p) => {
                ActionGrad::Categorical(jt.action.iter().zip(p).map(|(t, pi)| t / pi).collect())
            }
            ActionDist::Gaussian(g) => ActionGrad::Gaussian {
                mean: jt
                    .action
                    .iter()
                    .zip(&g.log_std)
                    .map(|(t, ls)| t / (ls + ls).exp())
                    .collect(),
                log_std: jt.log_std.iter().map(|t| 2.0 * t).collect(),
            },
            ActionDist::Deterministic(_) => {
                return Err(Error::Usage("trust region needs a stochastic action head".into()))
            }
        };
        let rg: Option<Vec<f64>> = use_x.then(|| {
            jt.repetition
                .iter()
                .zip(&eval.repetition)
                .map(|(t, p)| beta_kl * t / p)
                .collect()
        });
        let g = policy.backward(eval, Some(&ag), rg.as_deref())?;
        out.axpy(1.0, &g)?;
    }
    let n = evals.len() as f64;
    Ok(out
        .values()
        .iter()
        .zip(v)
        .map(|(f, vi)| f / n + damping * vi)
        .collect())
}

/// Record of one trust-region update.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrustRegionStep {
    #[serde(skip)]
    pub search_direction: Vec<f64>,
    pub full_step_size: f64,
    /// Fraction of the full step taken; 0 when rejected.
    pub accepted_fraction: f64,
    pub accepted: bool,
    pub kl_after: f64,
    pub max_kl_after: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub form: SurrogateForm,
}

/// One natural-gradient step with backtracking. Returns the new parameters
/// (unchanged on rejection) and the step record.
pub fn trust_region_update(
    policy: &FactoredPolicy<f64>,
    batch: &SurrogateBatch,
    config: &TrpoConfig,
) -> Result<(Vec<f64>, TrustRegionStep)> {
    batch.validate()?;
    let beta_kl = config.beta_kl();
    let form = resolve_form(policy, batch, config.surrogate);
    let evals = evaluate_all(policy, batch)?;
    let before = surrogate_from(policy, batch, &evals, config.beta_ar, form, true)?;
    let old = policy.params().into_values();
    if !before.grad.is_finite() || !before.value.is_finite() {
        return Err(Error::Numeric("surrogate gradient is not finite".into()));
    }
    let rejected = |direction: Vec<f64>, full: f64| TrustRegionStep {
        search_direction: direction,
        full_step_size: full,
        accepted_fraction: 0.0,
        accepted: false,
        kl_after: 0.0,
        max_kl_after: 0.0,
        surrogate_before: before.value,
        surrogate_after: before.value,
        form,
    };
    let g = before.grad.values();
    if g.iter().all(|&v| v == 0.0) {
        return Ok((old, rejected(vec![0.0; g.len()], 0.0)));
    }
    let fvp = |v: &[f64]| fisher_vector_product(policy, &evals, beta_kl, config.cg_damping, v);
    let direction = conjugate_gradient(fvp, g, config.cg_iters, 1e-10)?;
    let curvature: f64 = direction
        .iter()
        .zip(fvp(&direction)?)
        .map(|(d, fd)| d * fd)
        .sum();
    if !(curvature > 0.0) || !curvature.is_finite() {
        return Ok((old, rejected(direction, 0.0)));
    }
    let full = (2.0 * config.delta / curvature).sqrt();
    let mut fraction = 1.0;
    for _ in 0..=config.max_backtracks {
        let candidate: Vec<f64> = old
            .iter()
            .zip(&direction)
            .map(|(p, d)| p + fraction * full * d)
            .collect();
        let trial = policy.with_params(&candidate)?;
        let trial_evals = evaluate_all(&trial, batch);
        if let Ok(trial_evals) = trial_evals {
            let (kl, max_kl) = kl_from(&trial, batch, &trial_evals, beta_kl)?;
            let after = surrogate_from(&trial, batch, &trial_evals, config.beta_ar, form, false)?;
            if kl <= config.delta && after.value > before.value {
                return Ok((
                    candidate,
                    TrustRegionStep {
                        search_direction: direction,
                        full_step_size: full,
                        accepted_fraction: fraction,
                        accepted: true,
                        kl_after: kl,
                        max_kl_after: max_kl,
                        surrogate_before: before.value,
                        surrogate_after: after.value,
                        form,
                    },
                ));
            }
        }
        fraction *= config.backtrack_ratio;
    }
    Ok((old, rejected(direction, full)))
}

/// Index of the entry with the highest average return (first on ties).
pub fn track_best_policy(history: &[f64]) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::Usage("no improvement steps recorded".into()));
    }
    let mut best = 0;
    for (i, &r) in history.iter().enumerate() {
        if r > history[best] {
            best = i;
        }
    }
    Ok(best)
}
