//! Exact solvers for small tabular environments.
//!
//! [`expand_smdp`] turns a primitive-step model into a semi-Markov model over
//! (action, repetition) pairs by enumerating every primitive trajectory, and
//! [`smdp_value_iteration`] solves it with synchronous Bellman backups using
//! `γ^elapsed` discounting.

mod evaluate;

pub use evaluate::{evaluate_policy, Evaluation, EVAL_STEP_CAP};
#[cfg(test)]
use evaluate::mean_std;

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::envs::{Action, TabularEnv};
use crate::error::{Error, Result};
use crate::numcore::Scalar;
use crate::policy::{DecisionMaker, RepetitionSet, SamplingMode};
use crate::rng::StreamRng;

/// Largest state space [`expand_smdp`] will enumerate.
pub const MAX_STATES: usize = 10_000;
/// Largest repetition [`expand_smdp`] will expand.
pub const MAX_REPETITION: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000_000;

/// One aggregated result of executing a macro-action.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroOutcome<T> {
    pub probability: T,
    pub next_state: usize,
    /// Expected within-macro discounted reward given this (next state, elapsed).
    pub reward: T,
    pub elapsed: usize,
}

#[derive(Clone, Debug)]
pub struct TabularSmdp<T> {
    pub gamma: T,
    pub set: RepetitionSet,
    pub num_actions: usize,
    pub start_state: usize,
    pub terminal: Vec<bool>,
    /// Indexed `[state][action][repetition index]`.
    pub outcomes: Vec<Vec<Vec<Vec<MacroOutcome<T>>>>>,
}

impl<T: Scalar> TabularSmdp<T> {
    pub fn num_states(&self) -> usize {
        self.terminal.len()
    }
}

/// Expands `env` into a semi-Markov model over `A × W`.
pub fn expand_smdp<T: Scalar>(env: &dyn TabularEnv, set: &RepetitionSet, gamma: T) -> Result<TabularSmdp<T>> {
    let n = env.num_states();
    if n > MAX_STATES {
        return Err(Error::Oracle(format!("{n} states exceeds the cap of {MAX_STATES}")));
    }
    if set.max() > MAX_REPETITION {
        return Err(Error::Oracle(format!(
            "repetition {} exceeds the cap of {MAX_REPETITION}",
            set.max()
        )));
    }
    if !(gamma > T::zero() && gamma <= T::one()) {
        return Err(Error::Config(format!("discount {gamma} outside (0, 1]")));
    }
    let terminal: Vec<bool> = (0..n).map(|s| env.is_terminal_state(s)).collect();
    let mut outcomes = Vec::with_capacity(n);
    for s in 0..n {
        let mut per_action = Vec::with_capacity(env.num_actions());
        for a in 0..env.num_actions() {
            let per_x = set
                .values()
                .iter()
                .map(|&x| {
                    if terminal[s] {
                        Ok(vec![MacroOutcome {
                            probability: T::one(),
                            next_state: s,
                            reward: T::zero(),
                            elapsed: 1,
                        }])
                    } else {
                        expand_one(env, &terminal, s, a, x, gamma)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            per_action.push(per_x);
        }
        outcomes.push(per_action);
    }
    Ok(TabularSmdp {
        gamma,
        set: set.clone(),
        num_actions: env.num_actions(),
        start_state: env.start_state(),
        terminal,
        outcomes,
    })
}

/// Forward pass over primitive steps, tracking probability mass and
/// probability-weighted discounted reward per intermediate state.
fn expand_one<T: Scalar>(
    env: &dyn TabularEnv,
    terminal: &[bool],
    s: usize,
    a: usize,
    x: usize,
    gamma: T,
) -> Result<Vec<MacroOutcome<T>>> {
    let mut frontier: BTreeMap<usize, (T, T)> = BTreeMap::from([(s, (T::one(), T::zero()))]);
    let mut done: BTreeMap<(usize, usize), (T, T)> = BTreeMap::new();
    let mut discount = T::one();
    for t in 0..x {
        let mut next: BTreeMap<usize, (T, T)> = BTreeMap::new();
        for (&st, &(p, pr)) in &frontier {
            for (q, ns, r) in env.outcomes(st, a) {
                if ns >= terminal.len() {
                    return Err(Error::Oracle(format!("successor {ns} out of range")));
                }
                let q = T::lit(q);
                if q == T::zero() {
                    continue;
                }
                let mass = p * q;
                let reward = pr * q + mass * discount * T::lit(r);
                let slot = if terminal[ns] || t + 1 == x {
                    done.entry((ns, t + 1)).or_insert((T::zero(), T::zero()))
                } else {
                    next.entry(ns).or_insert((T::zero(), T::zero()))
                };
                slot.0 += mass;
                slot.1 += reward;
            }
        }
        frontier = next;
        discount *= gamma;
    }
    Ok(done
        .into_iter()
        .map(|((next_state, elapsed), (p, pr))| MacroOutcome {
            probability: p,
            next_state,
            reward: pr / p,
            elapsed,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution<T> {
    pub values: Vec<T>,
    /// Indexed `[state][action][repetition index]`.
    pub q: Vec<Vec<Vec<T>>>,
    /// Optimal `(action, repetition)` per state.
    pub policy: Vec<(usize, usize)>,
    pub sweeps: usize,
    pub residual: T,
}

fn backup<T: Scalar>(model: &TabularSmdp<T>, values: &[T], outcomes: &[MacroOutcome<T>]) -> T {
    outcomes.iter().fold(T::zero(), |acc, o| {
        acc + o.probability * (o.reward + model.gamma.powi(o.elapsed as i32) * values[o.next_state])
    })
}

/// Synchronous value iteration to a sup-norm residual below `tol`.
///
/// Ties between optimal pairs (within `1e-9` relative) go to the larger repetition.
pub fn smdp_value_iteration<T: Scalar>(model: &TabularSmdp<T>, tol: T) -> Result<OracleSolution<T>> {
    if !(tol > T::zero()) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let n = model.num_states();
    let mut values = vec![T::zero(); n];
    let mut sweeps = 0;
    let residual = loop {
        if sweeps >= MAX_SWEEPS {
            return Err(Error::Oracle(format!("value iteration did not converge in {MAX_SWEEPS} sweeps")));
        }
        let new: Vec<T> = (0..n)
            .map(|s| {
                if model.terminal[s] {
                    return T::zero();
                }
                model.outcomes[s]
                    .iter()
                    .flatten()
                    .map(|o| backup(model, &values, o))
                    .fold(T::neg_infinity(), T::max)
            })
            .collect();
        let residual = new
            .iter()
            .zip(&values)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        values = new;
        sweeps += 1;
        if !residual.is_finite() {
            return Err(Error::Oracle("value iteration diverged".into()));
        }
        if residual < tol {
            break residual;
        }
    };
    let q: Vec<Vec<Vec<T>>> = model
        .outcomes
        .iter()
        .map(|per_a| per_a.iter().map(|per_x| per_x.iter().map(|o| backup(model, &values, o)).collect()).collect())
        .collect();
    let policy = q.iter().map(|qs| greedy_pair(qs)).collect();
    Ok(OracleSolution {
        values,
        q,
        policy,
        sweeps,
        residual,
    })
}

fn greedy_pair<T: Scalar>(q: &[Vec<T>]) -> (usize, usize) {
    let best = q.iter().flatten().copied().fold(T::neg_infinity(), T::max);
    let slack = T::lit(1e-9) * best.abs().max(T::one());
    let mut choice = (0, 0);
    let mut found = false;
    for (a, qs) in q.iter().enumerate() {
        for (xi, &v) in qs.iter().enumerate() {
            if v >= best - slack && (!found || xi > choice.1) {
                choice = (a, xi);
                found = true;
            }
        }
    }
    choice
}

impl<T: Scalar> OracleSolution<T> {
    /// Writes `state,a_star,x_star,v_star` rows.
    pub fn write_csv<W: Write>(&self, set: &RepetitionSet, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "a_star", "x_star", "v_star"])?;
        for (s, (&(a, xi), v)) in self.policy.iter().zip(&self.values).enumerate() {
            w.write_record([
                s.to_string(),
                a.to_string(),
                set.values()[xi].to_string(),
                format!("{}", v.to_f64_lossy()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Plays the oracle's optimal pair in every state.
pub struct OraclePolicy<'a, T> {
    solution: &'a OracleSolution<T>,
    env: &'a dyn TabularEnv,
    set: RepetitionSet,
}

impl<'a, T: Scalar> OraclePolicy<'a, T> {
    pub fn new(solution: &'a OracleSolution<T>, model: &TabularSmdp<T>, env: &'a dyn TabularEnv) -> Self {
        Self {
            solution,
            env,
            set: model.set.clone(),
        }
    }
}

impl<T: Scalar> DecisionMaker for OraclePolicy<'_, T> {
    fn repetition_set(&self) -> &RepetitionSet {
        &self.set
    }

    fn choose(&self, observation: &[f64], _mode: SamplingMode, _rng: &mut StreamRng) -> Result<(Action, usize)> {
        let s = self
            .env
            .decode_observation(observation)
            .ok_or_else(|| Error::Oracle("observation does not decode to a state".into()))?;
        let (a, xi) = self.solution.policy[s];
        Ok((Action::Discrete(a), self.set.values()[xi]))
    }
}

/// Solution summary used by the `oracle` command.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSummary {
    pub start_value: f64,
    pub start_action: usize,
    pub start_repetition: usize,
    pub sweeps: usize,
}

impl<T: Scalar> OracleSolution<T> {
    pub fn summary(&self, model: &TabularSmdp<T>) -> OracleSummary {
        let (a, xi) = self.policy[model.start_state];
        OracleSummary {
            start_value: self.values[model.start_state].to_f64_lossy(),
            start_action: a,
            start_repetition: model.set.values()[xi],
            sweeps: self.sweeps,
        }
    }
}
