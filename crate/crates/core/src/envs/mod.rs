//! Environments and the macro-action executor.
//!
//! Trainers never call [`Environment::step`] directly; they go through
//! [`execute_macro`], which repeats one action for up to `x` primitive steps
//! and folds the rewards into a single discounted macro reward.

mod corridor;
mod point_mass;

pub use corridor::Corridor;
pub use point_mass::PointMass;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::RepetitionSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Width of the action vector (`n` one-hot entries for discrete spaces).
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub observation_dim: usize,
    pub action_space: ActionSpace,
    pub max_primitive_steps: usize,
    pub discount: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.observation_dim == 0 || self.max_primitive_steps == 0 {
            return Err(Error::Config("observation_dim and max_primitive_steps must be positive".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1]", self.discount)));
        }
        match &self.action_space {
            ActionSpace::Discrete(n) if *n < 2 => Err(Error::Config("discrete action space needs n >= 2".into())),
            ActionSpace::Continuous { low, high } if low.len() != high.len() || low.is_empty() => {
                Err(Error::Config("continuous bounds must be non-empty and paired".into()))
            }
            ActionSpace::Continuous { low, high } if low.iter().zip(high).any(|(l, h)| l >= h) => {
                Err(Error::Config("continuous bounds need lower < upper".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveStep {
    pub reward: f64,
    pub observation: Vec<f64>,
    /// Episode is over: goal/absorbing state reached or the step limit hit.
    pub terminal: bool,
    /// The episode ended only because of the step limit.
    pub truncated: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode. Stochastic environments reseed from `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one primitive time step.
    fn step(&mut self, action: &Action) -> Result<PrimitiveStep>;

    fn observation(&self) -> Vec<f64>;

    fn is_terminal(&self) -> bool;

    fn primitive_steps(&self) -> usize;

    /// Whether the episode ended in its goal state (as opposed to a timeout).
    fn reached_goal(&self) -> bool;

    fn boxed_clone(&self) -> Box<dyn Environment>;
}

/// Discrete environment whose dynamics can be enumerated exactly.
pub trait TabularEnv {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn start_state(&self) -> usize;
    fn is_terminal_state(&self, state: usize) -> bool;
    /// `(probability, next_state, reward)` triples for one primitive step.
    fn outcomes(&self, state: usize, action: usize) -> Vec<(f64, usize, f64)>;
    fn encode_state(&self, state: usize) -> Vec<f64>;
    fn decode_observation(&self, observation: &[f64]) -> Option<usize>;
}

/// One decision step: an action held for `elapsed` primitive steps.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroTransition {
    pub state: Vec<f64>,
    pub action: Action,
    pub repetition: usize,
    /// `Σ_{i < elapsed} γ^i ρ_i` over the primitive rewards `ρ_i`.
    pub macro_reward: f64,
    pub elapsed: usize,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
    pub primitive_rewards: Vec<f64>,
}

impl MacroTransition {
    pub fn undiscounted_reward(&self) -> f64 {
        self.primitive_rewards.iter().sum()
    }
}

/// Repeats `action` for `repetition` primitive steps, stopping early when the
/// episode ends.
pub fn execute_macro(
    env: &mut dyn Environment,
    action: &Action,
    repetition: usize,
    allowed: &RepetitionSet,
    gamma: f64,
) -> Result<MacroTransition> {
    if !allowed.contains(repetition) {
        return Err(Error::Config(format!(
            "repetition {repetition} not in set {:?}",
            allowed.values()
        )));
    }
    if env.is_terminal() {
        return Err(Error::Usage("macro executed on a finished episode".into()));
    }
    let state = env.observation();
    let mut rewards = Vec::with_capacity(repetition);
    let mut macro_reward = 0.0;
    let mut discount = 1.0;
    let mut last = None;
    for _ in 0..repetition {
        let step = env.step(action)?;
        macro_reward += discount * step.reward;
        discount *= gamma;
        rewards.push(step.reward);
        let done = step.terminal;
        last = Some(step);
        if done {
            break;
        }
    }
    let last = last.expect("repetition is at least one");
    Ok(MacroTransition {
        state,
        action: action.clone(),
        repetition,
        macro_reward,
        elapsed: rewards.len(),
        next_state: last.observation,
        terminal: last.terminal,
        truncated: last.truncated,
        primitive_rewards: rewards,
    })
}

/// Environment selection by name, as used in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvConfig {
    Corridor {
        length: usize,
        #[serde(default = "default_discount")]
        discount: f64,
        #[serde(default = "default_corridor_steps")]
        max_steps: usize,
    },
    ChainSwitch {
        length: usize,
        slip: f64,
        #[serde(default = "default_discount")]
        discount: f64,
        #[serde(default = "default_corridor_steps")]
        max_steps: usize,
    },
    PointMass {
        #[serde(default = "default_discount")]
        discount: f64,
        #[serde(default = "default_point_mass_steps")]
        max_steps: usize,
    },
}

fn default_discount() -> f64 {
    0.99
}

fn default_corridor_steps() -> usize {
    500
}

fn default_point_mass_steps() -> usize {
    200
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match *self {
            EnvConfig::Corridor {
                length,
                discount,
                max_steps,
            } => Box::new(Corridor::new(length, 0.0, discount, max_steps)?),
            EnvConfig::ChainSwitch {
                length,
                slip,
                discount,
                max_steps,
            } => Box::new(Corridor::new(length, slip, discount, max_steps)?),
            EnvConfig::PointMass { discount, max_steps } => Box::new(PointMass::new(discount, max_steps)?),
        })
    }

    /// Tabular view for the oracle, when the environment is enumerable.
    pub fn tabular(&self) -> Result<Corridor> {
        match *self {
            EnvConfig::Corridor {
                length,
                discount,
                max_steps,
            } => Corridor::new(length, 0.0, discount, max_steps),
            EnvConfig::ChainSwitch {
                length,
                slip,
                discount,
                max_steps,
            } => Corridor::new(length, slip, discount, max_steps),
            EnvConfig::PointMass { .. } => Err(Error::Config("point-mass has no tabular model".into())),
        }
    }

    pub fn label(&self) -> String {
        match self {
            EnvConfig::Corridor { length, .. } => format!("corridor{length}"),
            EnvConfig::ChainSwitch { length, .. } => format!("chainswitch{length}"),
            EnvConfig::PointMass { .. } => "pointmass".into(),
        }
    }

    pub fn discount(&self) -> f64 {
        match *self {
            EnvConfig::Corridor { discount, .. }
            | EnvConfig::ChainSwitch { discount, .. }
            | EnvConfig::PointMass { discount, .. } => discount,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{make_repetition_set, RepetitionVariant};

    /// Emits reward 1 forever.
    #[derive(Clone)]
    struct Unit {
        spec: EnvSpec,
        steps: usize,
        limit: usize,
    }

    impl Environment for Unit {
        fn spec(&self) -> &EnvSpec {
            &self.spec
        }
        fn reset(&mut self, _seed: u64) -> Vec<f64> {
            self.steps = 0;
            vec![0.0]
        }
        fn step(&mut self, _action: &Action) -> Result<PrimitiveStep> {
            self.steps += 1;
            Ok(PrimitiveStep {
                reward: 1.0,
                observation: vec![self.steps as f64],
                terminal: self.steps >= self.limit,
                truncated: false,
            })
        }
        fn observation(&self) -> Vec<f64> {
            vec![self.steps as f64]
        }
        fn is_terminal(&self) -> bool {
            self.steps >= self.limit
        }
        fn primitive_steps(&self) -> usize {
            self.steps
        }
        fn reached_goal(&self) -> bool {
            self.is_terminal()
        }
        fn boxed_clone(&self) -> Box<dyn Environment> {
            Box::new(self.clone())
        }
    }

    fn unit(limit: usize) -> Unit {
        Unit {
            spec: EnvSpec {
                observation_dim: 1,
                action_space: ActionSpace::Discrete(2),
                max_primitive_steps: 100,
                discount: 0.5,
            },
            steps: 0,
            limit,
        }
    }

    fn w(k: usize) -> RepetitionSet {
        make_repetition_set(&RepetitionVariant::Range(k), 0).unwrap()
    }

    #[test]
    fn geometric_macro_reward() {
        let mut env = unit(100);
        env.reset(0);
        let t = execute_macro(&mut env, &Action::Discrete(0), 3, &w(3), 0.5).unwrap();
        assert_eq!(t.macro_reward, 1.75);
        assert_eq!(t.elapsed, 3);
        assert!(!t.terminal);
    }

    #[test]
    fn single_step_macro() {
        let mut env = unit(100);
        env.reset(0);
        let t = execute_macro(&mut env, &Action::Discrete(0), 1, &w(3), 0.5).unwrap();
        assert_eq!((t.macro_reward, t.elapsed), (1.0, 1));
    }

    #[test]
    fn truncates_at_episode_end() {
        let mut env = unit(2);
        env.reset(0);
        let t = execute_macro(&mut env, &Action::Discrete(0), 5, &w(5), 1.0).unwrap();
        assert_eq!(t.elapsed, 2);
        assert!(t.terminal);
        assert!(execute_macro(&mut env, &Action::Discrete(0), 1, &w(5), 1.0).is_err());
    }

    #[test]
    fn repetition_outside_set_rejected() {
        let mut env = unit(10);
        env.reset(0);
        let r = execute_macro(&mut env, &Action::Discrete(0), 4, &w(3), 1.0);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn spec_validation() {
        let mut spec = unit(1).spec;
        assert!(spec.validate().is_ok());
        spec.action_space = ActionSpace::Discrete(1);
        assert!(spec.validate().is_err());
        spec.action_space = ActionSpace::Continuous {
            low: vec![1.0],
            high: vec![1.0],
        };
        assert!(spec.validate().is_err());
    }
}
