//! Simulation designs, replicated studies, and selection accuracy.

pub mod config;
pub mod dgp;
pub mod score;
pub mod study;

pub use config::parse_study_config;
pub use dgp::{generate_model, simulate_panel, DgpName, DgpSpec, ErrorDist, TrueModel};
pub use score::{cdr_metrics, sparsity_loss_metrics, CdrMetrics, SparsityLoss};
pub use study::{run_study, FixedPenalty, McReport, PenaltyChoice, StudyConfig};
