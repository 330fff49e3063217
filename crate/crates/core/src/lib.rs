//! Factored action-repetition policies (an action head plus a repetition
//! head) layered over actor-critic, trust-region and deterministic policy
//! gradient learners, with a tabular semi-Markov oracle for verification.

pub mod a3c;
pub mod ddpg;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod numcore;
pub mod oracle;
pub mod policy;
pub mod reporting;
pub mod rng;
pub mod trainlog;
pub mod trpo;

pub use error::{Error, Result};
pub use numcore::Scalar;

pub type Mlp64 = numcore::Mlp<f64>;
pub type Mlp32 = numcore::Mlp<f32>;
pub type ParamVector64 = numcore::ParamVector<f64>;
pub type DiagGaussian64 = numcore::DiagGaussian<f64>;
pub type FactoredPolicy64 = policy::FactoredPolicy<f64>;
pub type FactoredPolicy32 = policy::FactoredPolicy<f32>;
pub type TabularSmdp64 = oracle::TabularSmdp<f64>;
pub type OracleSolution64 = oracle::OracleSolution<f64>;
