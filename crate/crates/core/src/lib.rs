//! Numerical tools for maximum and comparison principles of one-dimensional
//! SPDEs driven by a single Wiener process.
//!
//! * [`paths`]: Wiener paths and dyadic oscillation statistics.
//! * [`auxiliary`]: strip hitting probabilities, their dyadic bound, the
//!   time change to auxiliary solutions and boundary-decay statistics.
//! * [`spde_fd`]: the finite-difference solver and the discrete energy identity.
//! * [`maxprin`]: sign, comparison and envelope verifiers, plus coefficient
//!   assumption checks.
//! * [`weighted_norms`]: boundary-weighted Sobolev norms and decay exponents.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auxiliary;
pub mod error;
pub mod maxprin;
pub mod paths;
pub mod report;
pub mod rng;
pub mod spde_fd;
pub mod weighted_norms;

pub use error::{Error, Result};
pub use paths::{McEstimate, McParams, SamplePath, TimeGrid};
pub use report::{Report, Verdict};
pub use spde_fd::{FieldSolution, SpaceGrid, SpdeProblem};
