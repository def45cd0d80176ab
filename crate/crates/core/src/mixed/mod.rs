//! Crossed random-effects linear mixed models fitted by profiled REML,
//! bootstrap meta-regression and inverse-variance aggregation.

mod ivw;
mod meta;
mod reml;

pub use ivw::{implied_tau2, ivw_aggregate, percentile_ranks, Aggregate};
pub use meta::{fit_meta_regression, MetaCoefficient, MetaRegression, MetaRow};
pub use reml::{factorize, fit_reml, MixedFit, MixedSpec, RandomTerm, TermVariance};

use crate::numeric::sparse::SparseError;

#[derive(Debug, thiserror::Error)]
pub enum MixedError {
    #[error("fixed-effect design is rank deficient")]
    RankDeficient,
    #[error("grouping factor {0} has fewer than two levels")]
    TooFewLevels(String),
    #[error("{n} observations do not exceed {p} fixed parameters")]
    TooFewObservations { n: usize, p: usize },
    #[error("length mismatch: {what} has {got}, expected {want}")]
    Dimension { what: String, got: usize, want: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("no valid estimates")]
    NoValidEstimates,
    #[error(transparent)]
    Sparse(#[from] SparseError),
}
