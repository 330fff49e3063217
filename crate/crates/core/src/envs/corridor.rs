use rand::Rng;

use super::{Action, ActionSpace, EnvSpec, Environment, PrimitiveStep, TabularEnv};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[cfg(test)]
const LEFT: usize = 0;
const RIGHT: usize = 1;
const STEP_REWARD: f64 = -1.0;
const GOAL_REWARD: f64 = 10.0;

/// States `0..=length` on a line. Each primitive step costs 1; reaching
/// `length` pays 10 and ends the episode. With `slip > 0` the chosen action is
/// inverted with that probability on every primitive step.
#[derive(Clone, Debug)]
pub struct Corridor {
    length: usize,
    slip: f64,
    spec: EnvSpec,
    position: usize,
    steps: usize,
    done: bool,
    rng: StreamRng,
}

impl Corridor {
    pub fn new(length: usize, slip: f64, discount: f64, max_steps: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::Config("corridor length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&slip) {
            return Err(Error::Config(format!("slip probability {slip} outside [0, 1]")));
        }
        let spec = EnvSpec {
            observation_dim: length + 1,
            action_space: ActionSpace::Discrete(2),
            max_primitive_steps: max_steps,
            discount,
        };
        spec.validate()?;
        Ok(Self {
            length,
            slip,
            spec,
            position: 0,
            steps: 0,
            done: false,
            rng: rng::stream(0, "corridor", 0),
        })
    }

    /// Deterministic corridor with the default step limit.
    pub fn deterministic(length: usize, discount: f64) -> Result<Self> {
        Self::new(length, 0.0, discount, 500)
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    pub fn position(&self) -> usize {
        self.position
    }

    fn moved(&self, state: usize, action: usize) -> usize {
        if action == RIGHT {
            (state + 1).min(self.length)
        } else {
            state.saturating_sub(1)
        }
    }

    fn reward_for(&self, next: usize) -> f64 {
        if next == self.length {
            STEP_REWARD + GOAL_REWARD
        } else {
            STEP_REWARD
        }
    }
}

impl Environment for Corridor {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.position = 0;
        self.steps = 0;
        self.done = false;
        self.rng = rng::stream(seed, "corridor", 0);
        self.encode_state(0)
    }

    fn step(&mut self, action: &Action) -> Result<PrimitiveStep> {
        if self.done {
            return Err(Error::Usage("stepping a finished episode".into()));
        }
        let Action::Discrete(mut a) = *action else {
            return Err(Error::Usage("corridor takes discrete actions".into()));
        };
        if a > RIGHT {
            return Err(Error::Usage(format!("corridor action {a} out of range")));
        }
        if self.slip > 0.0 && self.rng.random::<f64>() < self.slip {
            a = 1 - a;
        }
        let next = self.moved(self.position, a);
        let reward = self.reward_for(next);
        self.position = next;
        self.steps += 1;
        let goal = next == self.length;
        let truncated = !goal && self.steps >= self.spec.max_primitive_steps;
        self.done = goal || truncated;
        Ok(PrimitiveStep {
            reward,
            observation: self.encode_state(next),
            terminal: self.done,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        self.encode_state(self.position)
    }

    fn is_terminal(&self) -> bool {
        self.done
    }

    fn primitive_steps(&self) -> usize {
        self.steps
    }

    fn reached_goal(&self) -> bool {
        self.position == self.length
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

impl TabularEnv for Corridor {
    fn num_states(&self) -> usize {
        self.length + 1
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn start_state(&self) -> usize {
        0
    }

    fn is_terminal_state(&self, state: usize) -> bool {
        state == self.length
    }

    fn outcomes(&self, state: usize, action: usize) -> Vec<(f64, usize, f64)> {
        let intended = self.moved(state, action);
        if self.slip == 0.0 {
            return vec![(1.0, intended, self.reward_for(intended))];
        }
        let flipped = self.moved(state, 1 - action);
        vec![
            (1.0 - self.slip, intended, self.reward_for(intended)),
            (self.slip, flipped, self.reward_for(flipped)),
        ]
    }

    fn encode_state(&self, state: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.length + 1];
        v[state] = 1.0;
        v
    }

    fn decode_observation(&self, observation: &[f64]) -> Option<usize> {
        if observation.len() != self.length + 1 {
            return None;
        }
        observation.iter().position(|&v| v == 1.0)
    }
}
