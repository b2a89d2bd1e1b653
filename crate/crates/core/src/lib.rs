//! Tabular double Q-learning: MDPs, learners, finite-time bound evaluation and
//! a seeded Monte-Carlo harness that checks the block-wise envelopes.

pub mod bounds;
pub mod error;
pub mod harness;
pub mod learners;
pub mod mdp;
pub mod theory;

pub use error::{Error, Result};
