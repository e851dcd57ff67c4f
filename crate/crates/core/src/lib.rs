//! Exact parameter reconstruction of query-only feed-forward networks.
//!
//! A hidden network (the *oracle*) is reconstructed by training a population of
//! same-architecture surrogates on queries synthesized to maximize committee
//! disagreement, then verified up to permutation, scaling and polarity
//! isomorphisms.

pub mod align;
pub mod config;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod persist;
pub mod reconstruct;
pub mod sampling;

pub use error::{Error, Result};
pub use nn::{
    backward, forward, init_glorot, l1_output_loss, Activation, GradBundle, MlpParams, MlpSpec,
};
pub use optim::{apply_schedule, OptimizerKind, OptimizerState, StepSchedule};
