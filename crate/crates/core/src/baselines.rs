//! Comparison recommenders: most-popular suppliers, and the FM restricted to
//! supplier and purchaser identities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::fm::FmParameters;
use crate::metrics::Recommender;
use crate::scalar::Scalar;
use crate::sparse::SparseVector;

/// Non-personalized recommender scoring each supplier by its training participation count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopularityModel {
    participation_counts: Vec<usize>,
}

impl PopularityModel {
    /// Counts, per supplier, the events among `train_events` it took part in.
    pub fn train(dataset: &InteractionDataset, train_events: &[usize]) -> Self {
        PopularityModel {
            participation_counts: dataset.participation_counts(train_events.iter().copied()),
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.participation_counts
    }

    /// Scores ignore the event entirely.
    pub fn score(&self, _event_vec: &SparseVector<f64>, candidates: &[usize]) -> Vec<(usize, f64)> {
        candidates
            .iter()
            .map(|&s| (s, self.participation_counts.get(s).copied().unwrap_or(0) as f64))
            .collect()
    }

    pub fn to_json(&self, schema: &FeatureSchema) -> String {
        let doc = PopularityDocument {
            version: POPULARITY_VERSION,
            kind: "popularity".into(),
            schema_hash: schema.hash(),
            counts: schema
                .suppliers()
                .iter()
                .cloned()
                .zip(self.participation_counts.iter().copied())
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("counts serialize")
    }

    pub fn from_json(text: &str, schema: &FeatureSchema) -> Result<Self> {
        let doc: PopularityDocument = serde_json::from_str(text)?;
        if doc.version != POPULARITY_VERSION {
            return Err(Error::Version {
                found: doc.version,
                expected: POPULARITY_VERSION,
            });
        }
        let found = schema.hash();
        if doc.schema_hash != found {
            return Err(Error::SchemaMismatch {
                expected: doc.schema_hash,
                found,
            });
        }
        Ok(PopularityModel {
            participation_counts: schema
                .suppliers()
                .iter()
                .map(|s| doc.counts.get(s).copied().unwrap_or(0))
                .collect(),
        })
    }
}

const POPULARITY_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PopularityDocument {
    version: u32,
    kind: String,
    schema_hash: String,
    counts: BTreeMap<String, usize>,
}

impl Recommender for PopularityModel {
    fn score_suppliers(
        &self,
        schema: &FeatureSchema,
        _event_vec: &SparseVector<f64>,
    ) -> Result<Vec<f64>> {
        Ok((0..schema.supplier_count())
            .map(|s| self.participation_counts.get(s).copied().unwrap_or(0) as f64)
            .collect())
    }
}

impl<T: Scalar> Recommender for FmParameters<T> {
    fn score_suppliers(
        &self,
        schema: &FeatureSchema,
        event_vec: &SparseVector<f64>,
    ) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..schema.supplier_count()).collect();
        Ok(self
            .score_candidates(&event_vec.cast(), &all, schema)?
            .into_iter()
            .map(|(_, score)| score.as_f64())
            .collect())
    }
}

/// Strips every event down to its purchaser one-hot, with a schema holding
/// only the supplier and purchaser blocks. Participation sets are untouched.
pub fn ablate_to_purchaser_only(dataset: &InteractionDataset) -> InteractionDataset {
    let schema = dataset.schema().purchaser_only();
    let purchasers = dataset.schema().purchaser_count();
    dataset.with_schema_and_features(schema, |e| e.features.restrict(0..purchasers))
}
