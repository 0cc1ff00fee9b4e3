//! Run configuration shared by every command, read from TOML or JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bpr::TrainConfig;
use crate::cv::{CvOptions, HyperGrid};
use crate::dataset::{GeneratorConfig, IngestOptions};
use crate::error::{Error, Result};
use crate::features::BowWeighting;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    F32,
    #[default]
    F64,
}

/// Every component seed is derived from `seed`; seeds inside the sections are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scalar: ScalarKind,
    pub min_token_count: usize,
    pub bow_weighting: BowWeighting,
    pub filter_suppliers: bool,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub grid: HyperGrid,
    pub cv: CvOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            scalar: ScalarKind::F64,
            min_token_count: 2,
            bow_weighting: BowWeighting::Counts,
            filter_suppliers: true,
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            grid: HyperGrid::default(),
            cv: CvOptions::default(),
        }
    }
}

impl RunConfig {
    /// Parses `.json` files as JSON and anything else as TOML.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|ext| ext == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            min_token_count: self.min_token_count,
            bow_weighting: self.bow_weighting,
            ..IngestOptions::default()
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: derive_seed(self.seed, "generate", &[]),
            ..self.generator.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train", &[]),
            ..self.train.clone()
        }
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            seed: derive_seed(self.seed, "cv", &[]),
            ..self.cv.clone()
        }
    }
}
