use rand::Rng;
use serde::{Deserialize, Serialize};

use super::repetition::RepetitionSet;
use crate::envs::{Action, ActionSpace};
use crate::error::{check_dim, Error, Result};
use crate::numcore::{categorical, Activation, DiagGaussian, Layout, Mlp, OutputTransform, ParamVector, Scalar, Trace};
use crate::rng;

/// Scale applied to the last layer of every policy head at initialization.
pub const HEAD_INIT_SCALE: f64 = 0.01;

/// How a [`Decision`] is drawn from the two heads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    Stochastic,
    /// Each head independently samples with probability `ε`, otherwise takes its argmax.
    EpsGreedy(f64),
    Greedy,
}

impl SamplingMode {
    pub fn validate(self) -> Result<Self> {
        match self {
            SamplingMode::EpsGreedy(e) if !(0.0..=1.0).contains(&e) => {
                Err(Error::Config(format!("epsilon {e} outside [0, 1]")))
            }
            _ => Ok(self),
        }
    }

    /// Whether a head with `outcomes` options samples this time. Single-option
    /// heads never flip a coin.
    fn explores<R: Rng + ?Sized>(self, outcomes: usize, rng: &mut R) -> bool {
        match self {
            SamplingMode::Stochastic => true,
            SamplingMode::Greedy => false,
            SamplingMode::EpsGreedy(_) if outcomes == 1 => false,
            SamplingMode::EpsGreedy(eps) => rng.random::<f64>() < eps,
        }
    }
}

/// Network shape shared by both heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyArch {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Heads consume the output of one common trunk instead of owning their layers.
    #[serde(default)]
    pub shared_trunk: bool,
    /// Initial value of every log standard deviation (Gaussian heads only).
    #[serde(default = "default_init_log_std")]
    pub init_log_std: f64,
}

fn default_init_log_std() -> f64 {
    -0.5
}

impl PolicyArch {
    pub fn new(hidden: Vec<usize>, activation: Activation) -> Self {
        Self {
            hidden,
            activation,
            shared_trunk: false,
            init_log_std: default_init_log_std(),
        }
    }

    pub fn with_shared_trunk(mut self) -> Self {
        self.shared_trunk = true;
        self
    }
}

/// What the action half of the policy produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionHeadKind {
    /// Softmax over discrete actions.
    Categorical,
    /// Diagonal Gaussian with a bounded mean and state-independent log std.
    Gaussian,
    /// Bounded deterministic output `μ(s)`.
    Deterministic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactoredPolicy<T> {
    trunk: Option<Mlp<T>>,
    action: Mlp<T>,
    kind: ActionHeadKind,
    log_std: Vec<T>,
    repetition: Mlp<T>,
    set: RepetitionSet,
    layout: Layout,
}

/// Action distribution produced for one state.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDist<T> {
    Categorical(Vec<T>),
    Gaussian(DiagGaussian<T>),
    Deterministic(Vec<T>),
}

/// Cached forward pass of both heads.
#[derive(Clone, Debug)]
pub struct PolicyEval<T> {
    trunk: Option<Trace<T>>,
    action_trace: Trace<T>,
    repetition_trace: Trace<T>,
    pub action: ActionDist<T>,
    pub repetition: Vec<T>,
}

/// Upstream gradient w.r.t. the action head's outputs.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionGrad<T> {
    /// W.r.t. the probability vector.
    Categorical(Vec<T>),
    Gaussian { mean: Vec<T>, log_std: Vec<T> },
    /// W.r.t. the deterministic action.
    Deterministic(Vec<T>),
}

/// Directional derivative of the head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTangent<T> {
    pub action: Vec<T>,
    pub log_std: Vec<T>,
    pub repetition: Vec<T>,
}

/// One (action, repetition) choice with log-probabilities under the unmodified heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision<T> {
    pub action: Action,
    /// Raw action vector (continuous heads) before environment clipping.
    pub action_vector: Vec<T>,
    pub repetition: usize,
    pub repetition_index: usize,
    pub logprob_a: T,
    pub logprob_x: T,
    pub action_probs: Option<Vec<T>>,
    pub repetition_probs: Vec<T>,
}

fn action_output<T: Scalar>(space: &ActionSpace, kind: ActionHeadKind) -> Result<(usize, OutputTransform<T>)> {
    match (space, kind) {
        (ActionSpace::Discrete(n), ActionHeadKind::Categorical) => Ok((*n, OutputTransform::Softmax)),
        (ActionSpace::Continuous { low, high }, ActionHeadKind::Gaussian | ActionHeadKind::Deterministic) => Ok((
            low.len(),
            OutputTransform::BoundedTanh {
                low: low.iter().map(|&v| T::lit(v)).collect(),
                high: high.iter().map(|&v| T::lit(v)).collect(),
            },
        )),
        _ => Err(Error::Config(format!("{kind:?} head does not fit action space {space:?}"))),
    }
}

impl<T: Scalar> FactoredPolicy<T> {
    /// Builds a policy for `space`. Each network draws its initial weights from
    /// its own stream derived from `seed`.
    pub fn new(
        observation_dim: usize,
        space: &ActionSpace,
        kind: ActionHeadKind,
        set: RepetitionSet,
        arch: &PolicyArch,
        seed: u64,
    ) -> Result<Self> {
        let (action_dim, transform) = action_output::<T>(space, kind)?;
        let act = arch.activation;
        let (trunk, head_input) = if arch.shared_trunk {
            if arch.hidden.is_empty() {
                return Err(Error::Config("a shared trunk needs at least one hidden layer".into()));
            }
            let sizes: Vec<usize> = std::iter::once(observation_dim).chain(arch.hidden.iter().copied()).collect();
            let trunk = Mlp::new(&sizes, act, OutputTransform::Hidden(act))?
                .initialized(&mut rng::stream(seed, "policy.trunk", 0), 1.0);
            (Some(trunk), vec![*arch.hidden.last().unwrap()])
        } else {
            let sizes: Vec<usize> = std::iter::once(observation_dim).chain(arch.hidden.iter().copied()).collect();
            (None, sizes)
        };
        let head = |out: usize, transform: OutputTransform<T>, label: &str| -> Result<Mlp<T>> {
            let sizes: Vec<usize> = head_input.iter().copied().chain(std::iter::once(out)).collect();
            Ok(Mlp::new(&sizes, act, transform)?.initialized(&mut rng::stream(seed, label, 0), HEAD_INIT_SCALE))
        };
        let action = head(action_dim, transform, "policy.action")?;
        let repetition = head(set.len(), OutputTransform::Softmax, "policy.repetition")?;
        let log_std = match kind {
            ActionHeadKind::Gaussian => vec![T::lit(arch.init_log_std); action_dim],
            _ => Vec::new(),
        };
        let mut policy = Self {
            trunk,
            action,
            kind,
            log_std,
            repetition,
            set,
            layout: Layout::default(),
        };
        policy.layout = policy.build_layout()?;
        Ok(policy)
    }

    fn build_layout(&self) -> Result<Layout> {
        let log_std = Layout::new(if self.log_std.is_empty() {
            vec![]
        } else {
            vec![crate::numcore::Segment::new("values", vec![self.log_std.len()])]
        })?;
        let mut parts: Vec<(&str, &Layout)> = Vec::new();
        if let Some(t) = &self.trunk {
            parts.push(("trunk", t.layout()));
        }
        parts.push(("action", self.action.layout()));
        parts.push(("log_std", &log_std));
        parts.push(("repetition", self.repetition.layout()));
        Layout::concat(parts)
    }

    pub fn repetition_set(&self) -> &RepetitionSet {
        &self.set
    }

    pub fn kind(&self) -> ActionHeadKind {
        self.kind
    }

    pub fn has_shared_trunk(&self) -> bool {
        self.trunk.is_some()
    }

    pub fn observation_dim(&self) -> usize {
        self.trunk.as_ref().unwrap_or(&self.action).input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action.output_dim()
    }

    pub fn action_head(&self) -> &Mlp<T> {
        &self.action
    }

    pub fn repetition_head(&self) -> &Mlp<T> {
        &self.repetition
    }

    pub fn trunk(&self) -> Option<&Mlp<T>> {
        self.trunk.as_ref()
    }

    pub fn log_std(&self) -> &[T] {
        &self.log_std
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn trunk_len(&self) -> usize {
        self.trunk.as_ref().map_or(0, |t| t.params().len())
    }

    /// Offsets of (trunk, action, log_std, repetition) inside the flat vector.
    fn offsets(&self) -> [usize; 4] {
        let t = self.trunk_len();
        let a = t + self.action.params().len();
        let l = a + self.log_std.len();
        [t, a, l, l + self.repetition.params().len()]
    }

    /// Flat range of the repetition head's parameters.
    pub fn repetition_range(&self) -> std::ops::Range<usize> {
        let [_, _, l, end] = self.offsets();
        l..end
    }

    /// Flat range of parameters owned by the action half (head plus log std).
    pub fn action_range(&self) -> std::ops::Range<usize> {
        let [t, _, l, _] = self.offsets();
        t..l
    }

    pub fn params(&self) -> ParamVector<T> {
        let mut values = Vec::with_capacity(self.layout.total());
        if let Some(t) = &self.trunk {
            values.extend_from_slice(t.params().values());
        }
        values.extend_from_slice(self.action.params().values());
        values.extend_from_slice(&self.log_std);
        values.extend_from_slice(self.repetition.params().values());
        ParamVector::new(self.layout.clone(), values).expect("layout built from the same parts")
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        check_dim("policy parameters", self.layout.total(), values.len())?;
        let [t, a, l, _] = self.offsets();
        if let Some(trunk) = &mut self.trunk {
            trunk.params_mut().assign(&values[..t])?;
        }
        self.action.params_mut().assign(&values[t..a])?;
        self.log_std.copy_from_slice(&values[a..l]);
        self.repetition.params_mut().assign(&values[l..])?;
        Ok(())
    }

    pub fn with_params(&self, values: &[T]) -> Result<Self> {
        let mut p = self.clone();
        p.set_params(values)?;
        Ok(p)
    }

    pub fn evaluate(&self, observation: &[T]) -> Result<PolicyEval<T>> {
        check_dim("policy observation", self.observation_dim(), observation.len())?;
        let trunk = self.trunk.as_ref().map(|t| t.forward_trace(observation)).transpose()?;
        let features = trunk.as_ref().map_or(observation, |t| t.output());
        let action_trace = self.action.forward_trace(features)?;
        let repetition_trace = self.repetition.forward_trace(features)?;
        let out = action_trace.output().to_vec();
        let action = match self.kind {
            ActionHeadKind::Categorical => ActionDist::Categorical(out),
            ActionHeadKind::Gaussian => ActionDist::Gaussian(DiagGaussian::new(out, self.log_std.clone())?),
            ActionHeadKind::Deterministic => ActionDist::Deterministic(out),
        };
        let repetition = repetition_trace.output().to_vec();
        let finite = repetition.iter().all(|v| v.is_finite())
            && match &action {
                ActionDist::Categorical(p) | ActionDist::Deterministic(p) => p.iter().all(|v| v.is_finite()),
                ActionDist::Gaussian(g) => g.mean.iter().all(|v| v.is_finite()),
            };
        if !finite {
            return Err(Error::Numeric("policy head produced non-finite output".into()));
        }
        Ok(PolicyEval {
            trunk,
            action_trace,
            repetition_trace,
            action,
            repetition,
        })
    }

    /// Gradient w.r.t. all policy parameters given upstream gradients at the head outputs.
    pub fn backward(
        &self,
        eval: &PolicyEval<T>,
        action_grad: Option<&ActionGrad<T>>,
        repetition_grad: Option<&[T]>,
    ) -> Result<ParamVector<T>> {
        let mut grad = vec![T::zero(); self.layout.total()];
        let [t, a, l, _] = self.offsets();
        let mut feature_grad: Option<Vec<T>> = None;
        let mut add_feature = |g: Vec<T>| match &mut feature_grad {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(x, &y)| *x += y),
            None => feature_grad = Some(g),
        };
        if let Some(ag) = action_grad {
            let upstream = match (ag, self.kind) {
                (ActionGrad::Categorical(u), ActionHeadKind::Categorical)
                | (ActionGrad::Deterministic(u), ActionHeadKind::Deterministic) => u,
                (ActionGrad::Gaussian { mean, log_std }, ActionHeadKind::Gaussian) => {
                    check_dim("log std gradient", self.log_std.len(), log_std.len())?;
                    grad[a..l].copy_from_slice(log_std);
                    mean
                }
                _ => return Err(Error::Usage("action gradient does not match head kind".into())),
            };
            let g = self.action.backward(&eval.action_trace, upstream)?;
            grad[t..a].copy_from_slice(g.params.values());
            add_feature(g.input);
        }
        if let Some(rg) = repetition_grad {
            let g = self.repetition.backward(&eval.repetition_trace, rg)?;
            grad[l..].copy_from_slice(g.params.values());
            add_feature(g.input);
        }
        if let (Some(trunk), Some(trace), Some(fg)) = (&self.trunk, &eval.trunk, feature_grad) {
            let g = trunk.backward(trace, &fg)?;
            grad[..t].copy_from_slice(g.params.values());
        }
        ParamVector::new(self.layout.clone(), grad)
    }

    /// Forward-mode derivative of the head outputs along a parameter direction.
    pub fn jvp(&self, eval: &PolicyEval<T>, tangent: &[T]) -> Result<HeadTangent<T>> {
        check_dim("policy tangent", self.layout.total(), tangent.len())?;
        let [t, a, l, _] = self.offsets();
        let feature_tangent = match (&self.trunk, &eval.trunk) {
            (Some(trunk), Some(trace)) => Some(trunk.jvp(trace, &tangent[..t], None)?),
            _ => None,
        };
        let action = self
            .action
            .jvp(&eval.action_trace, &tangent[t..a], feature_tangent.as_deref())?;
        let repetition = self
            .repetition
            .jvp(&eval.repetition_trace, &tangent[l..], feature_tangent.as_deref())?;
        Ok(HeadTangent {
            action,
            log_std: tangent[a..l].to_vec(),
            repetition,
        })
    }

    pub(crate) fn pick_action<R: Rng + ?Sized>(&self, dist: &ActionDist<T>, mode: SamplingMode, rng: &mut R) -> Result<(Action, Vec<T>, T)> {
        Ok(match dist {
            ActionDist::Categorical(p) => {
                let i = if mode.explores(p.len(), rng) {
                    categorical::sample(p, rng)
                } else {
                    categorical::argmax(p)
                };
                (Action::Discrete(i), Vec::new(), categorical::log_prob(p, i))
            }
            ActionDist::Gaussian(g) => {
                let v = if mode.explores(usize::MAX, rng) {
                    g.sample(rng)
                } else {
                    g.mean.clone()
                };
                let lp = g.log_prob(&v)?;
                (Action::Continuous(v.iter().map(|x| x.to_f64_lossy()).collect()), v, lp)
            }
            ActionDist::Deterministic(m) => (
                Action::Continuous(m.iter().map(|x| x.to_f64_lossy()).collect()),
                m.clone(),
                T::zero(),
            ),
        })
    }

    pub fn decide<R: Rng + ?Sized>(&self, observation: &[T], mode: SamplingMode, rng: &mut R) -> Result<Decision<T>> {
        self.decide_with(observation, mode, rng, None)
    }

    /// Like [`decide`](Self::decide), but `forced_repetition` bypasses the
    /// repetition head's draw (it must still belong to the set).
    pub fn decide_with<R: Rng + ?Sized>(
        &self,
        observation: &[T],
        mode: SamplingMode,
        rng: &mut R,
        forced_repetition: Option<usize>,
    ) -> Result<Decision<T>> {
        let eval = self.evaluate(observation)?;
        self.decide_from(&eval, mode, rng, forced_repetition)
    }

    /// Draws a decision from an already evaluated state.
    pub fn decide_from<R: Rng + ?Sized>(
        &self,
        eval: &PolicyEval<T>,
        mode: SamplingMode,
        rng: &mut R,
        forced_repetition: Option<usize>,
    ) -> Result<Decision<T>> {
        let mode = mode.validate()?;
        let (action, action_vector, logprob_a) = self.pick_action(&eval.action, mode, rng)?;
        let p = &eval.repetition;
        let repetition_index = match forced_repetition {
            Some(x) => self
                .set
                .index_of(x)
                .ok_or_else(|| Error::Config(format!("forced repetition {x} not in set")))?,
            None if mode.explores(p.len(), rng) => categorical::sample(p, rng),
            None => categorical::argmax(p),
        };
        let action_probs = match &eval.action {
            ActionDist::Categorical(p) => Some(p.clone()),
            _ => None,
        };
        Ok(Decision {
            action,
            action_vector,
            repetition: self.set.values()[repetition_index],
            repetition_index,
            logprob_a,
            logprob_x: categorical::log_prob(p, repetition_index),
            action_probs,
            repetition_probs: eval.repetition.clone(),
        })
    }

    /// `(log π_a(a|s), log π_x(x|s))`.
    pub fn joint_logprob(&self, observation: &[T], action: &Action, repetition: usize) -> Result<(T, T)> {
        let eval = self.evaluate(observation)?;
        let ix = self
            .set
            .index_of(repetition)
            .ok_or_else(|| Error::Config(format!("repetition {repetition} not in set")))?;
        Ok((action_logprob(&eval.action, action)?, categorical::log_prob(&eval.repetition, ix)))
    }

    /// Gradient of `log π_a(a|s) + log π_x(x|s)` w.r.t. all parameters.
    pub fn joint_logprob_grad(&self, observation: &[T], action: &Action, repetition: usize) -> Result<ParamVector<T>> {
        let eval = self.evaluate(observation)?;
        let ix = self
            .set
            .index_of(repetition)
            .ok_or_else(|| Error::Config(format!("repetition {repetition} not in set")))?;
        let ag = action_logprob_grad(&eval.action, action, T::one())?;
        let rg = categorical_logprob_grad(&eval.repetition, ix, T::one());
        self.backward(&eval, ag.as_ref(), Some(&rg))
    }

    /// `(H_a, H_x)`; deterministic heads have zero action entropy.
    pub fn entropy(&self, observation: &[T]) -> Result<(T, T)> {
        let eval = self.evaluate(observation)?;
        Ok((action_entropy(&eval.action), categorical::entropy(&eval.repetition)))
    }

    /// Actor output `[action | repetition probabilities]`, width `|A| + |W|`.
    pub fn concatenated_output(&self, observation: &[T]) -> Result<Vec<T>> {
        let eval = self.evaluate(observation)?;
        let mut out = match &eval.action {
            ActionDist::Categorical(v) | ActionDist::Deterministic(v) => v.clone(),
            ActionDist::Gaussian(g) => g.mean.clone(),
        };
        out.extend_from_slice(&eval.repetition);
        Ok(out)
    }
}

pub fn action_logprob<T: Scalar>(dist: &ActionDist<T>, action: &Action) -> Result<T> {
    match (dist, action) {
        (ActionDist::Categorical(p), Action::Discrete(i)) if *i < p.len() => Ok(categorical::log_prob(p, *i)),
        (ActionDist::Gaussian(g), Action::Continuous(v)) => g.log_prob(&v.iter().map(|&x| T::lit(x)).collect::<Vec<_>>()),
        (ActionDist::Deterministic(_), Action::Continuous(_)) => Ok(T::zero()),
        _ => Err(Error::Usage("action does not match the action head".into())),
    }
}

/// Upstream gradient for `scale * log π_a(a|s)`; `None` for deterministic heads.
pub fn action_logprob_grad<T: Scalar>(dist: &ActionDist<T>, action: &Action, scale: T) -> Result<Option<ActionGrad<T>>> {
    match (dist, action) {
        (ActionDist::Categorical(p), Action::Discrete(i)) if *i < p.len() => {
            Ok(Some(ActionGrad::Categorical(categorical_logprob_grad(p, *i, scale))))
        }
        (ActionDist::Gaussian(g), Action::Continuous(v)) => {
            let a: Vec<T> = v.iter().map(|&x| T::lit(x)).collect();
            let (dm, dls) = g.log_prob_grad(&a)?;
            Ok(Some(ActionGrad::Gaussian {
                mean: dm.into_iter().map(|d| d * scale).collect(),
                log_std: dls.into_iter().map(|d| d * scale).collect(),
            }))
        }
        (ActionDist::Deterministic(_), Action::Continuous(_)) => Ok(None),
        _ => Err(Error::Usage("action does not match the action head".into())),
    }
}

/// Upstream gradient w.r.t. the probability vector of `scale * log p[index]`.
pub fn categorical_logprob_grad<T: Scalar>(probs: &[T], index: usize, scale: T) -> Vec<T> {
    let mut g = vec![T::zero(); probs.len()];
    g[index] = scale / probs[index];
    g
}

pub fn action_entropy<T: Scalar>(dist: &ActionDist<T>) -> T {
    match dist {
        ActionDist::Categorical(p) => categorical::entropy(p),
        ActionDist::Gaussian(g) => g.entropy(),
        ActionDist::Deterministic(_) => T::zero(),
    }
}

/// Upstream gradient of `scale * H_a`.
pub fn action_entropy_grad<T: Scalar>(dist: &ActionDist<T>, scale: T) -> Option<ActionGrad<T>> {
    match dist {
        ActionDist::Categorical(p) => Some(ActionGrad::Categorical(
            categorical::entropy_grad(p).into_iter().map(|g| g * scale).collect(),
        )),
        ActionDist::Gaussian(g) => Some(ActionGrad::Gaussian {
            mean: vec![T::zero(); g.dim()],
            log_std: vec![scale; g.dim()],
        }),
        ActionDist::Deterministic(_) => None,
    }
}

impl<T: Scalar> ActionGrad<T> {
    /// Elementwise sum of two gradients of the same kind.
    pub fn add(&self, other: &Self) -> Result<Self> {
        fn sum<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
            a.iter().zip(b).map(|(&x, &y)| x + y).collect()
        }
        Ok(match (self, other) {
            (ActionGrad::Categorical(a), ActionGrad::Categorical(b)) => ActionGrad::Categorical(sum(a, b)),
            (ActionGrad::Deterministic(a), ActionGrad::Deterministic(b)) => ActionGrad::Deterministic(sum(a, b)),
            (ActionGrad::Gaussian { mean: m1, log_std: l1 }, ActionGrad::Gaussian { mean: m2, log_std: l2 }) => {
                ActionGrad::Gaussian {
                    mean: sum(m1, m2),
                    log_std: sum(l1, l2),
                }
            }
            _ => return Err(Error::Usage("cannot add action gradients of different kinds".into())),
        })
    }
}
