//! Sparse spillover networks from vector autoregressions.
//!
//! The pipeline: load and standardize a panel, fit a VAR(p) by least squares,
//! expand it to moving-average form, identify shocks, decompose forecast-error
//! variances (orthogonalized or generalized), and prune small off-diagonal
//! contributions with an information criterion. The penalty can be tuned on
//! rolling pseudo-out-of-sample forecasts.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decomposition;
pub mod error;
pub mod matrix;
pub mod mc;
pub mod metrics;
pub mod panel;
pub mod shock;
pub mod sparsify;
pub mod tuner;
pub mod var;
pub mod vma;

pub use decomposition::{ContributionMatrix, DecompositionKind, FevdTable};
pub use error::{Error, Result};
pub use panel::{Panel, StandardizedPanel};
pub use sparsify::{EdgeMask, SparseSelection};
pub use var::VarFit;
