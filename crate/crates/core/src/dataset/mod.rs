//! Events, participation sets and the JSON Lines dataset format.

mod synthetic;

pub use synthetic::{generate_records, generate_synthetic, GeneratorConfig, SyntheticData};

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{BowWeighting, FeatureSchema, RawEvent, AUCTION_TYPES};
use crate::sparse::SparseVector;

/// A historical event: its meta-data vector X_e and participant set S_e.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub id: String,
    pub features: SparseVector<f64>,
    /// Sorted, duplicate-free supplier indices.
    pub participants: Vec<usize>,
}

impl Event {
    pub fn contains(&self, supplier: usize) -> bool {
        self.participants.binary_search(&supplier).is_ok()
    }
}

/// Options controlling how raw records become a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub min_token_count: usize,
    pub bow_weighting: BowWeighting,
    /// Event ids dropped before the schema is built.
    pub exclude: BTreeSet<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            min_token_count: 2,
            bow_weighting: BowWeighting::Counts,
            exclude: BTreeSet::new(),
        }
    }
}

/// Events with encoded meta-data plus the unary participation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    schema: FeatureSchema,
    events: Vec<Event>,
}

impl InteractionDataset {
    /// Checks that event ids are unique and every participant and feature is valid under `schema`.
    pub fn from_parts(schema: FeatureSchema, events: Vec<Event>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(events.len());
        for event in &events {
            if !seen.insert(event.id.as_str()) {
                return Err(Error::DuplicateEvent(event.id.clone()));
            }
            event.features.check_dimension(schema.total_event_features())?;
            if event.participants.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Schema(format!(
                    "participants of `{}` are not sorted and unique",
                    event.id
                )));
            }
            if let Some(&s) = event.participants.last() {
                if s >= schema.supplier_count() {
                    return Err(Error::SupplierOutOfRange {
                        index: s,
                        count: schema.supplier_count(),
                    });
                }
            }
        }
        Ok(InteractionDataset { schema, events })
    }

    /// Builds the schema from the records themselves and encodes every event.
    ///
    /// Suppliers are indexed in lexicographic id order.
    pub fn from_records(records: &[RawEvent], options: &IngestOptions) -> Result<Self> {
        let records: Vec<&RawEvent> = records
            .iter()
            .filter(|r| !options.exclude.contains(&r.event_id))
            .collect();
        if records.is_empty() {
            return Err(Error::NoEvents);
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.event_id.as_str()) {
                return Err(Error::DuplicateEvent(r.event_id.clone()));
            }
        }
        let suppliers: BTreeSet<&str> = records
            .iter()
            .flat_map(|r| r.suppliers.iter().map(String::as_str))
            .collect();
        let suppliers: Vec<String> = suppliers.into_iter().map(String::from).collect();
        let owned: Vec<RawEvent> = records.iter().map(|&r| r.clone()).collect();
        let schema = FeatureSchema::build(
            &owned,
            &suppliers,
            options.min_token_count,
            options.bow_weighting,
        )?;
        let events = owned
            .iter()
            .map(|r| {
                let participants: BTreeSet<usize> = r
                    .suppliers
                    .iter()
                    .map(|s| schema.supplier_index(s).expect("supplier collected above"))
                    .collect();
                Event {
                    id: r.event_id.clone(),
                    features: schema.encode_event(r).vector,
                    participants: participants.into_iter().collect(),
                }
            })
            .collect();
        Self::from_parts(schema, events)
    }

    /// Reads a JSON Lines file of raw events. Blank lines are skipped.
    pub fn load(path: impl AsRef<Path>, options: &IngestOptions) -> Result<Self> {
        let records = read_records(path)?;
        Self::from_records(&records, options)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, index: usize) -> &Event {
        &self.events[index]
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    pub fn n_suppliers(&self) -> usize {
        self.schema.supplier_count()
    }

    /// Σ_e |S_e|.
    pub fn interaction_count(&self) -> usize {
        self.events.iter().map(|e| e.participants.len()).sum()
    }

    /// Number of events (among `events`) each supplier participated in.
    pub fn participation_counts(&self, events: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut counts = vec![0; self.n_suppliers()];
        for e in events {
            for &s in &self.events[e].participants {
                counts[s] += 1;
            }
        }
        counts
    }

    /// Drops suppliers that participated in at most one event, in a single pass.
    ///
    /// Removing a supplier never changes another supplier's count, so one
    /// pass already reaches the fixed point.
    pub fn filter_suppliers(&self) -> InteractionDataset {
        let counts = self.participation_counts(0..self.n_events());
        let mut remap = vec![None; counts.len()];
        let mut kept = Vec::new();
        for (s, &c) in counts.iter().enumerate() {
            if c >= 2 {
                remap[s] = Some(kept.len());
                kept.push(self.schema.suppliers()[s].clone());
            }
        }
        if kept.len() == counts.len() {
            return self.clone();
        }
        let schema = self.schema.with_suppliers(kept);
        let events = self
            .events
            .iter()
            .map(|e| Event {
                id: e.id.clone(),
                features: e.features.clone(),
                participants: e.participants.iter().filter_map(|&s| remap[s]).collect(),
            })
            .collect();
        InteractionDataset { schema, events }
    }

    /// 1 − Σ_e |S_e| / (E·S).
    pub fn sparsity(&self) -> Result<f64> {
        sparsity_from_counts(self.n_events(), self.n_suppliers(), self.interaction_count())
    }

    /// Random partition of all event indices into `n_folds` folds.
    pub fn split_events(&self, n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        let all: Vec<usize> = (0..self.n_events()).collect();
        split_indices(&all, n_folds, seed)
    }

    pub(crate) fn with_schema_and_features(
        &self,
        schema: FeatureSchema,
        features: impl Fn(&Event) -> SparseVector<f64>,
    ) -> InteractionDataset {
        let events = self
            .events
            .iter()
            .map(|e| Event {
                id: e.id.clone(),
                features: features(e),
                participants: e.participants.clone(),
            })
            .collect();
        InteractionDataset { schema, events }
    }
}

pub fn sparsity_from_counts(events: usize, suppliers: usize, interactions: usize) -> Result<f64> {
    if events == 0 || suppliers == 0 {
        return Err(Error::EmptyDataset(format!(
            "{} events x {} suppliers",
            events, suppliers
        )));
    }
    Ok(1.0 - interactions as f64 / (events as f64 * suppliers as f64))
}

/// Shuffles `items` and deals them into `n_folds` folds whose sizes differ by at most one.
///
/// The first `len % n_folds` folds receive the extra element. Each fold is
/// returned in ascending order.
pub fn split_indices(items: &[usize], n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_folds == 0 || n_folds > items.len() {
        return Err(Error::TooManyFolds {
            folds: n_folds,
            events: items.len(),
        });
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = items.len() / n_folds;
    let extra = items.len() % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for f in 0..n_folds {
        let size = base + usize::from(f < extra);
        let mut fold = shuffled[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RawEvent>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_error = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let record: RawEvent = serde_json::from_str(&line).map_err(|e| parse_error(e.to_string()))?;
        if !AUCTION_TYPES.contains(&record.auction_type.as_str()) {
            return Err(parse_error(format!(
                "auction_type `{}` is not one of {:?}",
                record.auction_type, AUCTION_TYPES
            )));
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::NoEvents);
    }
    Ok(records)
}

pub fn write_records(records: &[RawEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Plain-text list of event ids, one per line; blank lines and `#` comments ignored.
pub fn read_exclusions(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}
