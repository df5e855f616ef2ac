//! Run configuration shared by every command, one TOML section per command.
//!
//! ```toml
//! [csv]
//! missing = "NA"
//!
//! [fit]
//! iterations = 10000
//! burn_in = 5000
//! f = 20
//! s = 15
//!
//! [contaminate]
//! rho = 0.2
//!
//! [analyze]
//! battery = "queries.txt"
//!
//! [synthesize]
//! households = 1000
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::contaminate::ContaminationSpec;
use crate::error::IoError;
use crate::io::CsvOptions;
use crate::sampler::GibbsConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Query battery file; when absent every marginal and bivariate probability is evaluated.
    pub battery: Option<PathBuf>,
    /// Imputed datasets; when empty, the `imputed_*.csv` files of the output directory.
    pub imputed: Vec<PathBuf>,
    /// Complete truth dataset for evaluation reports.
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub households: usize,
    /// Number of synthetic datasets.
    pub datasets: usize,
    /// Checkpoint to synthesize from; when absent, the output directory's `checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    /// Rejection attempts per synthetic household.
    pub cap: u64,
    /// When set, perturb the input data with this keep probability, fit with
    /// error rates fixed at `1 - keep`, and synthesize from that fit.
    pub pram_keep: Option<f64>,
    pub seed: u64,
}

impl Default for SynthesizeConfig {
    fn default() -> Self {
        SynthesizeConfig {
            households: 1000,
            datasets: 1,
            checkpoint: None,
            cap: 1_000_000,
            pram_keep: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub csv: CsvOptions,
    pub fit: GibbsConfig,
    pub contaminate: ContaminationSpec,
    pub analyze: AnalyzeConfig,
    pub synthesize: SynthesizeConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
