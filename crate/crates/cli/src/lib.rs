//! Experiment harness and acceptance checks for self-consistent mean-field QAOA.

pub mod config;
pub mod experiments;
pub mod pipeline;
pub mod verify;
