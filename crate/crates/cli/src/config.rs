//! Run configuration: TOML file, CLI overrides, resolved copy per run.

use benchmetry::analysis::CampaignConfig;
use benchmetry::cfa::StructureKind;
use benchmetry::data::FacetComposition;
use benchmetry::gtheory::FacetCompositions;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const RESOLVED_NAME: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub jobs: usize,
    pub out: PathBuf,
    pub data: DataConfig,
    pub campaign: CampaignConfig,
    pub facets: FacetConfig,
    pub gstudy: GStudyConfig,
    pub latreg: LatRegConfig,
    pub simulate: SimulateConfig,
    pub rank: RankConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            jobs: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            campaign: CampaignConfig::default(),
            facets: FacetConfig::default(),
            gstudy: GStudyConfig::default(),
            latreg: LatRegConfig::default(),
            simulate: SimulateConfig::default(),
            rank: RankConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub responses: Option<PathBuf>,
    /// `wide` or `long`.
    pub layout: String,
    pub metadata: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { responses: None, layout: "wide".into(), metadata: None }
    }
}

/// Metadata columns joined with `:` per model-level facet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FacetConfig {
    pub architecture: String,
    pub contributor: String,
    pub deployment: String,
}

impl Default for FacetConfig {
    fn default() -> Self {
        Self {
            architecture: "architecture:generation".into(),
            contributor: "author:removed:not_avail".into(),
            deployment: "type:chat_template:mo_e:merged:precision".into(),
        }
    }
}

impl FacetConfig {
    pub fn compositions(&self) -> FacetCompositions {
        FacetCompositions {
            a: FacetComposition::parse(&self.architecture),
            c: FacetComposition::parse(&self.contributor),
            d: FacetComposition::parse(&self.deployment),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GStudyConfig {
    pub facets: Vec<String>,
    pub slopes: bool,
}

impl Default for GStudyConfig {
    fn default() -> Self {
        Self { facets: ["A", "B", "C", "D"].map(String::from).to_vec(), slopes: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatRegConfig {
    /// Also fit the measurement model on every item for latent plot data.
    pub plot: bool,
}

impl Default for LatRegConfig {
    fn default() -> Self {
        Self { plot: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    Cfa,
    Irt,
    Gstudy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub kind: SimKind,
    pub structure: StructureKind,
    pub benches: Vec<usize>,
    pub n: usize,
    /// IRT only: generate metadata and a structural layer.
    pub latreg: bool,
    /// IRT size slopes per dimension, general first; empty means 1 then 0s.
    pub beta: Vec<f64>,
    pub contributors: usize,
    pub contributor_sd: f64,
    /// G-study levels of the architecture, contributor and deployment facets.
    pub levels: [usize; 3],
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            kind: SimKind::Cfa,
            structure: StructureKind::BiFact,
            benches: vec![12, 12, 12],
            n: 1000,
            latreg: false,
            beta: vec![],
            contributors: 50,
            contributor_sd: 0.3,
            levels: [4, 8, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub input: Option<PathBuf>,
    pub baseline: String,
    pub adjusted: String,
    /// Second table joined on `model_id` that holds the adjusted column.
    pub adjusted_input: Option<PathBuf>,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self { input: None, baseline: "baseline".into(), adjusted: "adjusted".into(), adjusted_input: None }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Validation(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        self.campaign.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.data.layout.parse::<benchmetry::data::Layout>().map_err(CliError::Validation)?;
        Ok(())
    }

    /// Writes the configuration as resolved for this run into `out`.
    pub fn write_resolved(&self) -> Result<PathBuf, CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Internal(format!("config serialization: {e}")))?;
        let path = self.out.join(RESOLVED_NAME);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("schema_version = 1\nbogus = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[campaign]\nreplicates = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[campaign.mhrm]\ncycle = 3\n").is_err());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 7\n[campaign]\nreplications = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.campaign.replications, 3);
        assert_eq!(cfg.campaign.r_k, CampaignConfig::default().r_k);
    }

    #[test]
    fn validation_rejects_bad_layout_and_seed() {
        let mut cfg = RunConfig::default();
        cfg.data.layout = "tall".into();
        assert!(matches!(cfg.validate(), Err(CliError::Validation(_))));
        let cfg = RunConfig { seed: u64::MAX, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(CliError::Validation(_))));
    }
}
