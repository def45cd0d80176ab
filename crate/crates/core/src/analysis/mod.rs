//! Bootstrap campaigns, rank stability and scaling-plot post-processing.

mod campaign;
mod plot;
mod rank;

pub use campaign::{
    run_cfa_campaign, run_latreg_campaign, CampaignConfig, CfaCampaign, Condition, DimensionSummary, FitRow,
    LatRegCampaign, LatRegReplication, MedianRow, MetaSummary, MiRow, PercentRankRow, SepcCell, MAX_FAILURE_SHARE,
    METRICS,
};
pub use plot::{min_max, scaling_plot_data, tukey_biweight_line, PlotPoint, RobustLine, ScalingPlot, BIWEIGHT_C};
pub use rank::{distance_correlation, kendall_tau_b, mid_percentile_ranks, rank_compare, RankReport};

use crate::data::DataError;
use crate::irt::IrtError;
use crate::mixed::MixedError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("inputs have lengths {left} and {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("inputs contain non-finite values")]
    NonFinite,
    #[error("{0}")]
    Degenerate(String),
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error("{failed} of {total} replications failed; first error: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Irt(#[from] IrtError),
    #[error(transparent)]
    Mixed(#[from] MixedError),
}
