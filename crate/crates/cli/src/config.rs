//! The run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use extra_tilt::classifier::TrainConfig;
use extra_tilt::fit::ExtraConfig;
use extra_tilt::rtb::MarketModel;
use extra_tilt::tilt::SufficientStatistic;
use extra_tilt::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// One JSON document describing a run.
///
/// Only `schema_version` is required. `market` is needed by `simulate`;
/// every other section falls back to its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market: Option<MarketModel>,
    /// Append the analytic market mean and spread as two feature columns.
    #[serde(default)]
    pub market_features: bool,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub extra: ExtraConfig,
    #[serde(default)]
    pub statistic: SufficientStatistic,
    /// Records in a simulated stream, or rows per domain when sampling a
    /// population.
    #[serde(default = "default_n_stream")]
    pub n_stream: usize,
    /// Size of the independent Monte-Carlo stream summarized in truth.json.
    #[serde(default = "default_n_oracle")]
    pub n_oracle: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hist_bins")]
    pub hist_bins: usize,
    /// Output directory; `--out` takes precedence. Not echoed into outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_n_stream() -> usize {
    100_000
}

fn default_n_oracle() -> usize {
    200_000
}

fn default_hist_bins() -> usize {
    20
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            market: None,
            market_features: false,
            train: TrainConfig::default(),
            extra: ExtraConfig::default(),
            statistic: SufficientStatistic::default(),
            n_stream: default_n_stream(),
            n_oracle: default_n_oracle(),
            seed: 0,
            hist_bins: default_hist_bins(),
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            file: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Loads `path`, or the defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// A seed override applies to the simulation, training and fitting
    /// seeds alike.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.extra.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if let Some(market) = &self.market {
            market.validate()?;
        }
        self.train.validate()?;
        self.extra.validate()?;
        if self.n_stream == 0 || self.n_oracle == 0 || self.hist_bins == 0 {
            return Err(Error::Invalid(
                "n_stream, n_oracle and hist_bins must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The copy written into output documents.
    pub fn echo(&self) -> Self {
        Self {
            out: None,
            ..self.clone()
        }
    }

    pub fn market(&self) -> Result<&MarketModel> {
        self.market
            .as_ref()
            .ok_or_else(|| Error::Invalid("config has no \"market\" section".into()))
    }
}
