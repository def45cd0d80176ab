//! Bifactor 2PL measurement model with a mixed-effects latent regression,
//! estimated by Metropolis-Hastings Robbins-Monro.

mod mhrm;
mod params;

pub use mhrm::{
    attenuation_demo, averaged_score, extract_scaling_vector, fit_mhrm, AttenuationRow, LatRegFit, MhrmConfig,
    ScoreParams,
};
pub use params::{irt_prob, IrtParams, ItemParams};

use crate::data::DataError;

#[derive(Debug, thiserror::Error)]
pub enum IrtError {
    #[error("items with zero variance must be removed before fitting: {0:?}")]
    ZeroVarianceItems(Vec<String>),
    #[error("latent regression requires ecosystem metadata")]
    MetadataRequired,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("discrimination for item {item} diverged to {value} at cycle {cycle}")]
    Divergent { item: String, cycle: usize, value: f64 },
    #[error("fit has no latent regression")]
    NoRegression,
    #[error("invalid input: {0}")]
    Invalid(String),
}
