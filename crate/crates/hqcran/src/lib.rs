//! Robustness certification for small feed-forward ReLU networks under
//! l-infinity perturbations.
//!
//! Three verifiers share one constraint encoding:
//!
//! - **exact**: complete mixed-integer verification by branch and bound,
//! - **convex**: incomplete triangle-relaxation LP verification,
//! - **hqcran**: a Benders decomposition that alternates a bounded dual LP
//!   (the *sub* problem) with a *master* over the binary ReLU phases. The
//!   master runs either as an exact MILP, as an exhaustive search over the
//!   equivalent QUBO, or as simulated annealing on the Ising form of that
//!   QUBO — the path a quantum annealer would take.
//!
//! The pipeline is: [`model::Network`] + [`model::Ball`] →
//! [`bounds::propagate_interval`] → [`bounds::classify_neurons`] →
//! [`encode::build_mip`] → one of the verifiers. `cli` and `bench` wrap the
//! whole thing into a command-line harness with CSV/JSON reporting.

pub mod bench;
pub mod benders;
pub mod bounds;
pub mod cli;
pub mod encode;
pub mod lp;
pub mod mat;
pub mod milp;
pub mod model;
pub mod qubo;
pub mod verifiers;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch in layer {layer}: {detail}")]
    DimensionMismatch { layer: usize, detail: String },

    #[error("non-finite entry in layer {layer} ({which})")]
    NonFinite { layer: usize, which: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("simplex iteration limit reached")]
    IterationLimit,

    #[error("branch-and-bound node limit reached (incumbent {incumbent:?}, bound {bound})")]
    NodeLimit { incumbent: Option<f64>, bound: f64 },

    #[error("problem is unbounded")]
    Unbounded,

    #[error("dual sub problem is infeasible")]
    SubInfeasible,
}

pub type Result<T> = std::result::Result<T, Error>;
