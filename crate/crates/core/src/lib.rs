//! Explainable home-energy control: a battery environment, a DQN teacher
//! and soft decision-tree students distilled from it, plus the tooling to
//! crispify, export, evaluate and visualize the resulting policies.

pub mod dataio;
pub mod cli;
pub mod ddt;
pub mod diffmath;
pub mod distill;
pub mod envsim;
pub mod evalkit;
pub mod error;
pub mod teacher;

pub use error::{Error, Result};
