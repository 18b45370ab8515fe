//! Regularized explicit data-driven predictive control.
//!
//! Controllers are built directly from one input/output trajectory: the
//! trajectory is arranged into Hankel matrices, a regularized QP is
//! assembled over the Hankel combination weights, and the QP is solved
//! either online ([`oracle`]) or offline as a piecewise-affine law of the
//! initial window ([`explicit`]).

pub mod benchmark;
pub mod closed_loop;
pub mod config;
pub mod data;
pub mod equivalence;
pub mod error;
pub mod explicit;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod system;

pub use error::{Error, Result};
