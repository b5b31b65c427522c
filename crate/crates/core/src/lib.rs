//! Autoregressive waypoint prediction toolkit.
//!
//! The crate treats short-horizon driving trajectories as sequences of 2-D
//! ego-frame waypoints and provides everything needed to study them at desk
//! scale: coordinate transforms and maneuver labels ([`geometry`]), LiDAR
//! depth projection ([`projection`]), the Gaussian/squared-distance
//! supervision pair ([`loss`]), a small autoregressive policy with
//! teacher-forced, scheduled, and free-running rollouts ([`policy`]),
//! a balanced-sampling training loop with a scheduled-sampling curriculum
//! ([`training`]), displacement metrics with optimal speed rescaling
//! ([`eval`]), and dataset generation plus text-format parsing ([`data`]).

pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod policy;
pub mod projection;
pub mod training;

pub use error::{Error, Result};
