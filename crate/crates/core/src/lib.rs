//! Multi-turn trajectory refinement lab: scoring, feedback, a toy token
//! policy, group-relative policy optimization and a rollout data pipeline.

pub mod curation;
pub mod env;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grpo;
pub mod pdm;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
