//! Factored action/repetition policies.
//!
//! A [`FactoredPolicy`] carries two independent heads: one over actions and a
//! softmax over the allowed repetition counts `W`. Both read the same
//! observation, either through disjoint layers or one shared trunk.

mod factored;
mod repetition;

pub use factored::{
    action_entropy, action_entropy_grad, action_logprob, action_logprob_grad, categorical_logprob_grad, ActionDist,
    ActionGrad, ActionHeadKind, Decision, FactoredPolicy, HeadTangent, PolicyArch, PolicyEval, SamplingMode,
    HEAD_INIT_SCALE,
};
pub use repetition::{make_repetition_set, RepetitionSet, RepetitionVariant};

use serde::Serialize;

use crate::envs::Action;
use crate::error::{Error, Result};
use crate::numcore::scalar::convert;
use crate::numcore::Scalar;
use crate::rng::StreamRng;

/// Anything that picks an (action, repetition) pair from an observation.
pub trait DecisionMaker {
    fn repetition_set(&self) -> &RepetitionSet;

    fn choose(&self, observation: &[f64], mode: SamplingMode, rng: &mut StreamRng) -> Result<(Action, usize)>;
}

impl<T: Scalar> DecisionMaker for FactoredPolicy<T> {
    fn repetition_set(&self) -> &RepetitionSet {
        FactoredPolicy::repetition_set(self)
    }

    fn choose(&self, observation: &[f64], mode: SamplingMode, rng: &mut StreamRng) -> Result<(Action, usize)> {
        let obs: Vec<T> = convert(observation);
        let d = self.decide(&obs, mode, rng)?;
        Ok((d.action, d.repetition))
    }
}

/// Runs the wrapped policy's action head but always repeats exactly once,
/// discarding the learnt repetition head.
pub struct WithoutRepetitionHead<'a, P> {
    inner: &'a P,
    single: RepetitionSet,
}

impl<'a, T: Scalar> WithoutRepetitionHead<'a, FactoredPolicy<T>> {
    pub fn new(inner: &'a FactoredPolicy<T>) -> Self {
        Self {
            inner,
            single: RepetitionSet::singleton(1).expect("1 is a valid repetition"),
        }
    }
}

impl<T: Scalar> DecisionMaker for WithoutRepetitionHead<'_, FactoredPolicy<T>> {
    fn repetition_set(&self) -> &RepetitionSet {
        &self.single
    }

    fn choose(&self, observation: &[f64], mode: SamplingMode, rng: &mut StreamRng) -> Result<(Action, usize)> {
        let obs: Vec<T> = convert(observation);
        let eval = self.inner.evaluate(&obs)?;
        let (action, _, _) = self.inner.pick_action(&eval.action, mode.validate()?, rng)?;
        Ok((action, 1))
    }
}

/// Fraction of decisions falling in one repetition bin `[low, high]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: usize,
    pub high: usize,
    pub fraction: f64,
}

impl HistogramBin {
    pub fn label(&self) -> String {
        format!("{}-{}", self.low, self.high)
    }
}

/// Bins chosen repetitions into `[1..=w], [w+1..=2w], ...` up to `w_max`.
pub fn repetition_histogram(repetitions: &[usize], bin_width: usize, w_max: usize) -> Result<Vec<HistogramBin>> {
    if repetitions.is_empty() {
        return Err(Error::Usage("histogram of an empty decision list".into()));
    }
    if bin_width == 0 || w_max == 0 {
        return Err(Error::Config("bin width and w_max must be positive".into()));
    }
    if let Some(&x) = repetitions.iter().find(|&&x| x == 0 || x > w_max) {
        return Err(Error::Usage(format!("repetition {x} outside 1..={w_max}")));
    }
    let bins = w_max.div_ceil(bin_width);
    let mut counts = vec![0usize; bins];
    for &x in repetitions {
        counts[(x - 1) / bin_width] += 1;
    }
    let n = repetitions.len() as f64;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| HistogramBin {
            low: i * bin_width + 1,
            high: ((i + 1) * bin_width).min(w_max),
            fraction: c as f64 / n,
        })
        .collect())
}
