//! Linear and mixed-integer linear programs behind a small, backend-independent
//! interface.
//!
//! A [`Program`] is built incrementally (dense, stable variable and constraint
//! indices), then handed to a [`Backend`]. The reference backend wraps HiGHS.
//! Programs can be exported to and re-imported from the CPLEX LP text format
//! for inspection with external tools.

mod error;
pub mod lp_format;
mod program;
mod solve;

pub use error::LpError;
pub use program::{Comparison, Constraint, ConstraintId, Program, Sense, VarId, VarKind, Variable};
pub use solve::{solve, Backend, HighsBackend, Session, SolveReport, SolveStatus, SolverParams};
