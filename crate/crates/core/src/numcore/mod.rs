//! Dense numerics: networks, distributions, optimizers and gradient checking.

pub mod dist;
pub mod gradcheck;
pub mod linalg;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod scalar;

pub use dist::{categorical, DiagGaussian};
pub use gradcheck::{check_gradient, numeric_gradient};
pub use linalg::conjugate_gradient;
pub use mlp::{softmax, Activation, Mlp, MlpGrad, OutputTransform, Trace};
pub use optim::{LinearAnneal, Optimizer, OptimizerKind, SharedRmsProp};
pub use params::{Layout, ParamVector, Segment, SharedParams};
pub use scalar::Scalar;
