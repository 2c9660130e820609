//! Guided trajectory planning for leader-follower teams.
//!
//! A leader agent learns a best-response model of a family of typed follower
//! agents, fast-adapts it to the follower at hand, and uses it inside a
//! barrier-penalized receding-horizon planner to steer the follower through
//! an obstacle field to a destination.

pub mod config;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod follower;
pub mod meta;
pub mod net;
pub mod parallel;
pub mod planner;
pub mod rng;
pub mod sampler;
pub mod svg;

pub use error::CoreError;
