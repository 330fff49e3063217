use serde::Serialize;

use crate::envs::{execute_macro, Environment};
use crate::error::{Error, Result};
use crate::policy::{repetition_histogram, DecisionMaker, HistogramBin, SamplingMode};
use crate::rng;

/// Evaluation stops starting new episodes once this many primitive steps have run.
pub const EVAL_STEP_CAP: usize = 100_000;

/// Monte Carlo statistics of a policy at primitive-step granularity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    /// Undiscounted per-episode returns.
    pub returns: Vec<f64>,
    /// Per-episode returns discounted by the environment's `γ`.
    pub discounted_returns: Vec<f64>,
    pub successes: usize,
    /// Every chosen repetition, in decision order.
    pub repetitions: Vec<usize>,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_discounted_return: f64,
    pub mean_repetition: f64,
    pub histogram: Vec<HistogramBin>,
}

impl Evaluation {
    pub fn episodes(&self) -> usize {
        self.returns.len()
    }

    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.returns.len() as f64
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `episodes` episodes (or until [`EVAL_STEP_CAP`] primitive steps)
/// and summarizes returns and chosen repetitions.
pub fn evaluate_policy(
    policy: &dyn DecisionMaker,
    env: &mut dyn Environment,
    episodes: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let gamma = env.spec().discount;
    let set = policy.repetition_set().clone();
    let mut rng = rng::stream(seed, "eval.decisions", 0);
    let mut returns = Vec::with_capacity(episodes);
    let mut discounted_returns = Vec::with_capacity(episodes);
    let mut repetitions = Vec::new();
    let mut successes = 0;
    let mut total_steps = 0;
    for ep in 0..episodes {
        if total_steps >= EVAL_STEP_CAP {
            break;
        }
        let mut obs = env.reset(rng::derive_seed(seed, "eval.episode", ep as u64));
        let (mut ret, mut disc, mut discount) = (0.0, 0.0, 1.0);
        while !env.is_terminal() {
            let (action, x) = policy.choose(&obs, mode, &mut rng)?;
            let t = execute_macro(env, &action, x, &set, gamma)?;
            for r in &t.primitive_rewards {
                ret += r;
                disc += discount * r;
                discount *= gamma;
            }
            repetitions.push(x);
            obs = t.next_state;
        }
        total_steps += env.primitive_steps();
        successes += usize::from(env.reached_goal());
        returns.push(ret);
        discounted_returns.push(disc);
    }
    let (mean_return, std_return) = mean_std(&returns);
    let mean_discounted_return = discounted_returns.iter().sum::<f64>() / discounted_returns.len() as f64;
    let mean_repetition = repetitions.iter().sum::<usize>() as f64 / repetitions.len() as f64;
    let histogram = repetition_histogram(&repetitions, 3, set.max())?;
    Ok(Evaluation {
        returns,
        discounted_returns,
        successes,
        repetitions,
        mean_return,
        std_return,
        mean_discounted_return,
        mean_repetition,
        histogram,
    })
}
