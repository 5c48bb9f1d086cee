//! Hybrid planning-assisted reinforcement learning for collision-free
//! navigation among crossing pedestrians.
//!
//! The pipeline per control step: build three cost maps from the observable
//! world, plan one path on each with anytime weighted hybrid A*, score the
//! candidates with a driver risk field, pick one with a lexicographic
//! rulebook, steer along it with pure pursuit, and choose the speed action
//! either with an online POMDP planner (training, planner baseline) or with
//! a discrete soft actor-critic learner (deployment).

pub mod config;
pub mod costmap;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hybrid;
pub mod planner;
pub mod pomdp;
pub mod risk;
pub mod rulebook;
pub mod sac;
pub mod world;

pub use error::{Error, Result};
