//! Confirmatory factor analysis of tetrachoric correlations.
//!
//! Six competing latent structures are fitted by diagonally weighted least
//! squares with thresholds held at their tetrachoric estimates. Residual
//! variances follow the delta parameterization: `Θ_jj = 1 − (ΛΦΛᵀ)_jj`,
//! floored at [`THETA_FLOOR`].

mod compare;
mod dwls;
mod mi;
mod scores;
mod structure;

pub use compare::{compare_structures, is_nested, percent_ranks, Comparison, MetricRanks};
pub use dwls::{fit_dwls, fit_dwls_with, fit_indices, CfaFit, DwlsObjective, FitIndices};
pub use mi::{modification_indices, top_residual_pairs, MiEntry, MiReport};
pub use scores::{auc, factor_scores, oos_predict, OosMetrics};
pub use structure::{implied_sigma, PhiSpec, StructureKind, StructureSpec};

use thiserror::Error;

/// Lower bound on residual variances; reaching it is reported as Heywood.
pub const THETA_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum CfaError {
    #[error("parameter vector has length {got}, structure expects {want}")]
    Dimension { got: usize, want: usize },
    #[error("structure needs {need} but the item map has {have}")]
    Structure { need: String, have: String },
    #[error("fits were estimated on different item subsets")]
    MismatchedSubsets,
    #[error("held-out set is empty or shares no benchmark with the fit")]
    EmptyHeldOut,
    #[error("{0}")]
    Invalid(String),
}
