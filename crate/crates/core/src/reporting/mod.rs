//! Analysis artifacts: improvement tables, sampling sweeps, repetition
//! histograms and the repetition-head ablation, each with a CSV writer.

use std::io::Write;

use serde::Serialize;

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::numcore::Scalar;
use crate::oracle::{evaluate_policy, Evaluation};
use crate::policy::{DecisionMaker, FactoredPolicy, HistogramBin, SamplingMode, WithoutRepetitionHead};

/// Default sampling probabilities for [`greedy_stochastic_sweep`].
pub const DEFAULT_SWEEP: [f64; 6] = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0];

/// Exploration probability used when scoring policies.
pub const EVAL_EPSILON: f64 = 0.1;

const Z_95: f64 = 1.96;

/// Relative improvement `(f - b) / b`. A zero baseline yields `+∞` (or NaN
/// when `f` is also zero) with `undefined` set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Improvement {
    pub value: f64,
    pub undefined: bool,
}

pub fn improvement(f: f64, b: f64) -> Improvement {
    if b == 0.0 {
        let value = if f == 0.0 { f64::NAN } else { f64::INFINITY };
        return Improvement { value, undefined: true };
    }
    Improvement {
        value: (f - b) / b,
        undefined: false,
    }
}

/// Normal-approximation 95% interval over per-episode scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn confidence_interval(scores: &[f64]) -> Result<ConfidenceInterval> {
    if scores.is_empty() {
        return Err(Error::Usage("confidence interval of no scores".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite episode score".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = if scores.len() < 2 {
        0.0
    } else {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let half = Z_95 * std / n.sqrt();
    Ok(ConfidenceInterval {
        mean,
        lower: mean - half,
        upper: mean + half,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub task: String,
    pub figar: f64,
    pub baseline: f64,
    pub improvement: f64,
    pub improvement_undefined: bool,
    pub figar_ci_lower: f64,
    pub figar_ci_upper: f64,
    pub baseline_ci_lower: f64,
    pub baseline_ci_upper: f64,
}

pub const COMPARISON_HEADER: [&str; 9] = [
    "task",
    "figar",
    "baseline",
    "improvement",
    "improvement_undefined",
    "figar_ci_lower",
    "figar_ci_upper",
    "baseline_ci_lower",
    "baseline_ci_upper",
];

impl ComparisonRow {
    /// Scores are the means of the per-episode returns.
    pub fn from_scores(task: impl Into<String>, figar: &[f64], baseline: &[f64]) -> Result<Self> {
        let f = confidence_interval(figar)?;
        let b = confidence_interval(baseline)?;
        let i = improvement(f.mean, b.mean);
        Ok(Self {
            task: task.into(),
            figar: f.mean,
            baseline: b.mean,
            improvement: i.value,
            improvement_undefined: i.undefined,
            figar_ci_lower: f.lower,
            figar_ci_upper: f.upper,
            baseline_ci_lower: b.lower,
            baseline_ci_upper: b.upper,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub p: f64,
    pub mean_return: f64,
    pub mean_repetition: f64,
}

pub const SWEEP_HEADER: [&str; 3] = ["p", "mean_return", "mean_repetition"];

/// Evaluates `policy` once per `p`, each head sampling with probability `p`
/// and otherwise acting greedily. Every point reuses `seed`.
pub fn greedy_stochastic_sweep(
    policy: &dyn DecisionMaker,
    env: &mut dyn Environment,
    ps: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Config(format!("sweep probability {p} outside [0, 1]")));
    }
    ps.iter()
        .map(|&p| {
            let ev = evaluate_policy(policy, env, episodes, SamplingMode::EpsGreedy(p), seed)?;
            Ok(SweepPoint {
                p,
                mean_return: ev.mean_return,
                mean_repetition: ev.mean_repetition,
            })
        })
        .collect()
}

/// Scores with and without the learnt repetition head.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ablation {
    pub full: Evaluation,
    pub ablated: Evaluation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub mean_return: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub mean_repetition: f64,
}

pub const ABLATION_HEADER: [&str; 5] = ["variant", "mean_return", "ci_lower", "ci_upper", "mean_repetition"];

impl Ablation {
    pub fn full_score(&self) -> f64 {
        self.full.mean_return
    }

    pub fn ablated_score(&self) -> f64 {
        self.ablated.mean_return
    }

    pub fn rows(&self) -> Result<Vec<AblationRow>> {
        [("full", &self.full), ("without-repetition-head", &self.ablated)]
            .into_iter()
            .map(|(name, ev)| {
                let ci = confidence_interval(&ev.returns)?;
                Ok(AblationRow {
                    variant: name.into(),
                    mean_return: ci.mean,
                    ci_lower: ci.lower,
                    ci_upper: ci.upper,
                    mean_repetition: ev.mean_repetition,
                })
            })
            .collect()
    }
}

/// Runs the policy as trained and with every repetition forced to 1, both
/// 0.1-greedy and both from `seed`.
pub fn ablate_repetition_head<T: Scalar>(
    policy: &FactoredPolicy<T>,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
) -> Result<Ablation> {
    let mode = SamplingMode::EpsGreedy(EVAL_EPSILON);
    let full = evaluate_policy(policy, env, episodes, mode, seed)?;
    let ablated = evaluate_policy(&WithoutRepetitionHead::new(policy), env, episodes, mode, seed)?;
    Ok(Ablation { full, ablated })
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are dropped by the caller.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let mut tail = 0.0;
    let mut coeff = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            coeff *= (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            tail += coeff;
        }
    }
    tail / 2f64.powi(n as i32)
}

pub const HISTOGRAM_HEADER: [&str; 4] = ["bin", "low", "high", "fraction"];

#[derive(Serialize)]
struct HistogramRow<'a> {
    bin: String,
    low: usize,
    high: usize,
    fraction: &'a f64,
}

fn write_rows<W: Write, R: Serialize>(out: W, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    write_rows(out, &COMPARISON_HEADER, rows)
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<()> {
    write_rows(out, &SWEEP_HEADER, points)
}

pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], out: W) -> Result<()> {
    write_rows(
        out,
        &HISTOGRAM_HEADER,
        bins.iter().map(|b| HistogramRow {
            bin: b.label(),
            low: b.low,
            high: b.high,
            fraction: &b.fraction,
        }),
    )
}

pub fn write_ablation_csv<W: Write>(ablation: &Ablation, out: W) -> Result<()> {
    write_rows(out, &ABLATION_HEADER, ablation.rows()?)
}
