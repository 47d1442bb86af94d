//! Penalized solvers for parabolic obstacle problems with small multiplicative
//! noise, reflection-measure certification, and large-deviation estimates.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: the 1-D grid on `(0, 1)`, nodal fields and discrete norms.
//! * [`operators`]: the p-Laplace operator and randomized checkers for its
//!   monotonicity, coercivity and growth constants.
//! * [`noise`]: Q-Wiener structure, the obstacle-vanishing diffusion and the
//!   Girsanov shift.
//! * [`skeleton`]: the controlled deterministic equation solved by penalization
//!   with ε-continuation.
//! * [`spde`]: the small-noise reflected SPDE and the shifted/controlled pair.
//! * [`rate`]: the rate functional and its minimization over controls.
//! * [`ldp`]: Monte-Carlo probability estimates over a δ-sweep.
//! * [`config`] and [`cli`]: run configuration, manifests and the command line.

// Parameter checks are written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod ldp;
pub mod mesh;
pub mod noise;
pub mod operators;
pub mod rate;
pub mod report;
pub mod rng;
pub mod skeleton;
pub mod spde;

pub use error::{Error, Result};
pub use mesh::{Field, Mesh, Trajectory};
pub use noise::{Control, DiffusionSpec, QSpec, WienerPath};
pub use operators::{CertifiedConstants, Operator, OperatorSpec};
pub use report::PropertyReport;
pub use skeleton::{PenaltyConfig, ProblemSpec, ReflectionMeasure};
