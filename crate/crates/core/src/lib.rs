//! Constrained screening POMDPs approximated on belief grids.
//!
//! The pipeline is: [`model::Model`] → [`grid::GridSet`] →
//! [`projection::ProjectionTables`] → [`occupancy::OccupancyProgram`]
//! (single objective) or [`pareto`] (two objectives) → [`sim`] for
//! Monte-Carlo evaluation. [`bounds`] holds unconstrained reference solvers.

pub mod bounds;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod model;
pub mod occupancy;
pub mod pareto;
pub mod policy;
pub mod projection;
pub mod sim;

pub use error::{CoreError, Result};
pub use grid::{GridMeta, GridSet};
pub use model::{BeliefState, Model, ModelSpec};
pub use projection::{ProjectionStrategy, ProjectionTables};
