//! Importance-weighted policy learning and adaptation.
//!
//! A multi-task RL toolkit built around one idea: sample candidate actions
//! from a shared behavior prior, tilt them by a per-task soft Q-function, and
//! use the resulting self-normalized weights for policy improvement, critic
//! targets, prior distillation, and transfer to new tasks. Every
//! non-parametric operator has an exact brute-force oracle in [`oracles`]
//! that the test suite checks against.

pub mod adapt;
pub mod env;
pub mod learner;
pub mod math;
pub mod metrics;
pub mod nets;
pub mod oracles;
pub mod real;
pub mod replay;
pub mod rng;
pub mod verify;

pub use real::{Real, ALPHA_MAX, ALPHA_MIN, SIGMA_MIN};
