use super::{Action, ActionSpace, EnvSpec, Environment, PrimitiveStep};
use crate::error::{Error, Result};

const DT: f64 = 0.1;
const FRICTION: f64 = 0.1;
const GOAL: [f64; 2] = [0.0, 0.0];
const START: [f64; 2] = [-1.0, -1.0];
const GOAL_RADIUS: f64 = 0.05;
const ARENA: f64 = 3.0;

/// Point mass in the plane driven by a scalar acceleration in `[-1, 1]`
/// along the diagonal `(1, 1)/√2`. Each primitive step pays
/// `-‖position − goal‖`; the episode ends once the mass passes within
/// 0.05 of the goal.
#[derive(Clone, Debug)]
pub struct PointMass {
    spec: EnvSpec,
    position: [f64; 2],
    velocity: [f64; 2],
    steps: usize,
    done: bool,
    goal_reached: bool,
}

impl PointMass {
    pub fn new(discount: f64, max_steps: usize) -> Result<Self> {
        let spec = EnvSpec {
            observation_dim: 4,
            action_space: ActionSpace::Continuous {
                low: vec![-1.0],
                high: vec![1.0],
            },
            max_primitive_steps: max_steps,
            discount,
        };
        spec.validate()?;
        Ok(Self {
            spec,
            position: START,
            velocity: [0.0; 2],
            steps: 0,
            done: false,
            goal_reached: false,
        })
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn distance_to_goal(&self) -> f64 {
        distance(self.position, GOAL)
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Distance from `p` to the segment `[a, b]`.
fn segment_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return distance(a, p);
    }
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    distance([a[0] + t * d[0], a[1] + t * d[1]], p)
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.position = START;
        self.velocity = [0.0; 2];
        self.steps = 0;
        self.done = false;
        self.goal_reached = false;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<PrimitiveStep> {
        if self.done {
            return Err(Error::Usage("stepping a finished episode".into()));
        }
        let Action::Continuous(a) = action else {
            return Err(Error::Usage("point-mass takes continuous actions".into()));
        };
        if a.len() != 1 || !a[0].is_finite() {
            return Err(Error::Usage("point-mass action must be one finite value".into()));
        }
        let accel = a[0].clamp(-1.0, 1.0) * std::f64::consts::FRAC_1_SQRT_2;
        let before = self.position;
        for i in 0..2 {
            self.velocity[i] = (1.0 - FRICTION) * self.velocity[i] + DT * accel;
            self.position[i] += DT * self.velocity[i];
            if self.position[i].abs() > ARENA {
                self.position[i] = self.position[i].clamp(-ARENA, ARENA);
                self.velocity[i] = 0.0;
            }
        }
        self.steps += 1;
        // Swept check so a fast pass through the goal disc still counts.
        self.goal_reached = segment_distance(before, self.position, GOAL) <= GOAL_RADIUS;
        let truncated = !self.goal_reached && self.steps >= self.spec.max_primitive_steps;
        self.done = self.goal_reached || truncated;
        Ok(PrimitiveStep {
            reward: -self.distance_to_goal(),
            observation: self.observation(),
            terminal: self.done,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
    }

    fn is_terminal(&self) -> bool {
        self.done
    }

    fn primitive_steps(&self) -> usize {
        self.steps
    }

    fn reached_goal(&self) -> bool {
        self.goal_reached
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
