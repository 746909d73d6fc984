//! Incentive mechanisms for security and risk-management investment games.
//!
//! A designer with a fixed budget subsidizes selfish units (players) through
//! per-unit incentive factors so that their Nash equilibrium investments serve
//! a designer objective. The crate provides the game itself, the one-shot
//! (direct) mechanisms, the iterative strategy-proof mechanisms, continuous-time
//! convergence analysis and equilibrium-uniqueness diagnostics.

pub mod cli;
pub mod direct_mech;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod iter_mech;
pub mod model;
pub mod report;

pub use error::{MechError, Result};
pub use model::{DesignerObjective, InfluenceMatrix, PlayerSpec, Scenario, Utility};
pub use report::{Check, DiagnosticsReport, Verdict};
