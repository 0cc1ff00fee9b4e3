//! Deterministic synthetic procurement data with planted region affinity.
//!
//! Every supplier and purchaser lives in one of `n_regions` regions. An event
//! takes its purchaser's region and a description mixing region-specific
//! place tokens with generic freight vocabulary. A supplier joins an event
//! with probability `base_participation_rate`, multiplied by
//! `affinity_boost` when the regions match.
//!
//! With `purchaser_region_loyalty` below 1, some events run in a random
//! region instead of the purchaser's home region; only the description
//! tokens reveal it.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IngestOptions, InteractionDataset};
use crate::error::{Error, Result};
use crate::features::{RawEvent, AUCTION_TYPES};

const REGION_STEMS: [&str; 12] = [
    "north", "south", "east", "west", "central", "coastal", "alpine", "delta", "harbor", "valley",
    "plains", "metro",
];

const GENERIC_TOKENS: [&str; 12] = [
    "pallet", "reefer", "tautliner", "express", "bulk", "container", "ftl", "ltl", "hazmat",
    "urgent", "weekly", "spot",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_events: usize,
    pub n_suppliers: usize,
    pub n_purchasers: usize,
    pub n_regions: usize,
    pub base_participation_rate: f64,
    pub affinity_boost: f64,
    /// Probability that an event runs in its purchaser's region.
    pub purchaser_region_loyalty: f64,
    pub n_timezones: usize,
    /// Distinct place tokens per region (at most 12).
    pub region_vocabulary: usize,
    pub region_tokens_per_event: usize,
    pub generic_tokens_per_event: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_events: 120,
            n_suppliers: 160,
            n_purchasers: 24,
            n_regions: 6,
            base_participation_rate: 0.02,
            affinity_boost: 8.0,
            purchaser_region_loyalty: 1.0,
            n_timezones: 4,
            region_vocabulary: 6,
            region_tokens_per_event: 3,
            generic_tokens_per_event: 2,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Shape of the published road-freight dataset: 165 events and 1690
    /// suppliers, with the base rate chosen so the expected pre-filter
    /// interaction count is 7023.
    pub fn road_freight_shape(seed: u64) -> Self {
        let mut config = GeneratorConfig {
            n_events: 165,
            n_suppliers: 1690,
            n_purchasers: 40,
            n_regions: 8,
            affinity_boost: 5.0,
            seed,
            ..GeneratorConfig::default()
        };
        config.base_participation_rate =
            config.base_rate_for_density(7023.0 / (165.0 * 1690.0));
        config
    }

    /// Expected pre-filter participation probability of a random pair.
    pub fn expected_density(&self) -> f64 {
        let r = self.n_regions as f64;
        let boosted = (self.base_participation_rate * self.affinity_boost).min(1.0);
        boosted / r + self.base_participation_rate.min(1.0) * (r - 1.0) / r
    }

    /// Base rate giving `density` expected participation, ignoring clamping.
    pub fn base_rate_for_density(&self, density: f64) -> f64 {
        let r = self.n_regions as f64;
        density / (self.affinity_boost / r + (r - 1.0) / r)
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("n_events", self.n_events),
            ("n_suppliers", self.n_suppliers),
            ("n_purchasers", self.n_purchasers),
            ("n_regions", self.n_regions),
            ("n_timezones", self.n_timezones),
            ("region_vocabulary", self.region_vocabulary),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, c)| *c == 0) {
            return Err(Error::Config(format!("{} must be positive", name)));
        }
        if self.region_vocabulary > REGION_STEMS.len() {
            return Err(Error::Config(format!(
                "region_vocabulary must be at most {}",
                REGION_STEMS.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.base_participation_rate) {
            return Err(Error::Config(
                "base_participation_rate must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.purchaser_region_loyalty) {
            return Err(Error::Config(
                "purchaser_region_loyalty must lie in [0, 1]".into(),
            ));
        }
        if self.affinity_boost.is_nan() || self.affinity_boost < 1.0 {
            return Err(Error::Config("affinity_boost must be at least 1".into()));
        }
        if self.expected_density() * (self.n_events * self.n_suppliers) as f64 <= 0.0 {
            return Err(Error::InfeasibleConfig(
                "expected participation count is zero".into(),
            ));
        }
        Ok(())
    }
}

/// Generated records plus the planted ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<RawEvent>,
    /// Region of every generated supplier, including those later dropped.
    pub supplier_regions: BTreeMap<String, usize>,
    /// Region of each record, aligned with `records`.
    pub event_regions: Vec<usize>,
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

/// Generates raw records. Suppliers left with fewer than two events are
/// removed so the output already satisfies the supplier filter.
pub fn generate_records(config: &GeneratorConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (ws, wp, we) = (
        width(config.n_suppliers),
        width(config.n_purchasers),
        width(config.n_events),
    );
    let supplier_ids: Vec<String> = (0..config.n_suppliers)
        .map(|s| format!("S{:0w$}", s, w = ws))
        .collect();
    let supplier_region: Vec<usize> = (0..config.n_suppliers)
        .map(|_| rng.gen_range(0..config.n_regions))
        .collect();
    let purchaser_region: Vec<usize> = (0..config.n_purchasers)
        .map(|_| rng.gen_range(0..config.n_regions))
        .collect();

    let boosted = (config.base_participation_rate * config.affinity_boost).clamp(0.0, 1.0);
    let base = config.base_participation_rate.clamp(0.0, 1.0);

    let mut records = Vec::with_capacity(config.n_events);
    let mut event_regions = Vec::with_capacity(config.n_events);
    for e in 0..config.n_events {
        let purchaser = rng.gen_range(0..config.n_purchasers);
        let region = if rng.gen_bool(config.purchaser_region_loyalty) {
            purchaser_region[purchaser]
        } else {
            rng.gen_range(0..config.n_regions)
        };
        let timezone = rng.gen_range(0..config.n_timezones);
        let auction = AUCTION_TYPES[rng.gen_range(0..AUCTION_TYPES.len())];
        let mut words = vec!["road".to_string(), "freight".to_string()];
        for _ in 0..config.region_tokens_per_event {
            let stem = REGION_STEMS[rng.gen_range(0..config.region_vocabulary)];
            words.push(format!("{}{}", stem, region));
        }
        for _ in 0..config.generic_tokens_per_event {
            words.push(GENERIC_TOKENS[rng.gen_range(0..GENERIC_TOKENS.len())].to_string());
        }
        let suppliers = (0..config.n_suppliers)
            .filter(|&s| {
                let p = if supplier_region[s] == region { boosted } else { base };
                rng.gen_bool(p)
            })
            .map(|s| supplier_ids[s].clone())
            .collect();
        records.push(RawEvent {
            event_id: format!("E{:0w$}", e, w = we),
            purchaser_id: format!("P{:0w$}", purchaser, w = wp),
            timezone: format!("UTC+{:02}", timezone),
            auction_type: auction.to_string(),
            description: words.join(" "),
            suppliers,
        });
        event_regions.push(region);
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        for s in &r.suppliers {
            *counts.entry(s.as_str()).or_default() += 1;
        }
    }
    let keep: std::collections::HashSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= 2)
        .map(|(s, _)| s.to_string())
        .collect();
    if keep.is_empty() {
        return Err(Error::InfeasibleConfig(
            "no supplier participates in two or more events".into(),
        ));
    }
    for r in &mut records {
        r.suppliers.retain(|s| keep.contains(s));
    }

    Ok(SyntheticData {
        records,
        supplier_regions: supplier_ids.into_iter().zip(supplier_region).collect(),
        event_regions,
    })
}

pub fn generate_synthetic(
    config: &GeneratorConfig,
    options: &IngestOptions,
) -> Result<InteractionDataset> {
    let data = generate_records(config)?;
    InteractionDataset::from_records(&data.records, options)
}
