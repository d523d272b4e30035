//! Multi-goal reinforcement learning with hindsight relabeling and
//! multi-step targets: one-step HER, n-step MHER, MHER(lambda), model-based
//! MMHER, plus instrumentation for the off-policy bias of n-step returns.

pub mod agent;
pub mod diagnostics;
pub mod dynamics;
pub mod envkit;
pub mod harness;
pub mod error;
pub mod numkit;
pub mod replay;
pub mod targets;

pub use error::{Error, Result};
