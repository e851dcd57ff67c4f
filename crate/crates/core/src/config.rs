//! JSON experiment configuration.
//!
//! One file describes the architecture, how the black box is obtained and how
//! it is reconstructed. Unknown keys are rejected everywhere. Sweeps describe
//! variants as JSON objects merged over a base configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::MlpSpec;
use crate::oracle::{NormalizationMode, TrainConfig};
use crate::reconstruct::ReconstructConfig;

/// Environment variable consulted when neither the command line nor the config
/// file sets a seed.
pub const SEED_ENV: &str = "NEUROME_SEED";

/// Where the black box's training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian class clusters; input width and class count follow the spec.
    Synth {
        samples: usize,
        seed: u64,
        /// Extra rows from a related distribution for the expanded-dataset sampler.
        #[serde(default)]
        expanded_samples: usize,
    },
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        /// Additional image files for the expanded-dataset sampler.
        #[serde(default)]
        expanded: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub data: DataSource,
    #[serde(default)]
    pub normalization: NormalizationMode,
    pub training: TrainConfig,
}

/// Starting point of the surrogate population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSection {
    #[default]
    Glorot,
    /// One member starts at the black box's initial weights. Without a file the
    /// weights are regenerated from the black box's training seed.
    SeedOne {
        #[serde(default)]
        weights: Option<PathBuf>,
    },
    /// Every member starts at the initial weights plus Gaussian noise.
    SeedAllNoisy {
        #[serde(default)]
        weights: Option<PathBuf>,
        noise_std: f32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionSection {
    pub run: ReconstructConfig,
    /// Restarts with a fresh seed after a non-converged attempt.
    #[serde(default)]
    pub retries: usize,
    #[serde(default)]
    pub init: InitSection,
    /// Random probe inputs used to measure classification agreement.
    #[serde(default = "default_probes")]
    pub probes: usize,
}

fn default_probes() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: MlpSpec,
    pub oracle: OracleSection,
    #[serde(default)]
    pub reconstruction: Option<ReconstructionSection>,
    /// Seed for reconstruction and sampling; see [`resolve_seed`].
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn reconstruction(&self) -> Result<&ReconstructionSection> {
        self.reconstruction
            .as_ref()
            .ok_or_else(|| Error::Config("config has no reconstruction section".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = &self.reconstruction {
            r.run.validate()?;
        }
        if self.oracle.training.batch_size == 0 {
            return Err(Error::Config("oracle batch size must be positive".into()));
        }
        Ok(())
    }

    /// Copy with the seed fixed to the resolved value.
    pub fn resolved(&self, seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..self.clone()
        }
    }
}

/// Seed precedence: explicit value, then the config file, then
/// `NEUROME_SEED`, then 0.
pub fn resolve_seed(explicit: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = explicit.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Recursive JSON merge: objects merge key by key, anything else replaces.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepVariant {
    pub id: String,
    /// Merged over the base configuration.
    #[serde(default)]
    pub patch: Value,
}

/// A base experiment plus named variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: Value,
    pub variants: Vec<SweepVariant>,
}

impl SweepConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// The fully merged and validated configuration of every variant, in order.
    pub fn expand(&self) -> Result<Vec<(String, ExperimentConfig)>> {
        let mut seen = std::collections::HashSet::new();
        self.variants
            .iter()
            .map(|v| {
                if !seen.insert(v.id.as_str()) {
                    return Err(Error::Config(format!("duplicate sweep id {:?}", v.id)));
                }
                let mut merged = self.base.clone();
                merge_json(&mut merged, &v.patch);
                let cfg: ExperimentConfig = serde_json::from_value(merged)
                    .map_err(|e| Error::Config(format!("variant {:?}: {e}", v.id)))?;
                cfg.validate()?;
                Ok((v.id.clone(), cfg))
            })
            .collect()
    }
}
