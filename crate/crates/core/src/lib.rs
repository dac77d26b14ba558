//! Kinematic racing simulation, pure pursuit, TD3 and a reference-modification
//! local planner, plus a minimum-curvature global planner.

pub mod config;
pub mod env;
pub mod error;
pub mod geometry;
pub mod global_plan;
pub mod harness;
pub mod io;
pub mod neural;
pub mod planner;
pub mod plot;
pub mod pursuit;
pub mod sim;
pub mod td3;

pub use error::{Error, Result};
