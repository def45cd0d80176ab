//! Measurement toolkit for AI benchmark ecosystems.
//!
//! Three estimation families share one data model: confirmatory factor
//! analysis over competing latent structures ([`cfa`]), crossed variance
//! decomposition with scaling-reliability metrics ([`gtheory`] on top of
//! [`mixed`]), and bifactor IRT with a latent regression layer ([`irt`]).
//! [`analysis`] runs item-set bootstrap campaigns over them and [`sim`]
//! generates data with known truth for every family.

pub mod analysis;
pub mod cfa;
pub mod data;
pub mod gtheory;
pub mod irt;
pub mod mixed;
pub mod numeric;
pub mod sim;
pub mod tetra;
