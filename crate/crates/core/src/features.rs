//! Feature space layout and encoding of suppliers and event meta-data.
//!
//! An instance vector is the concatenation of a supplier one-hot block and the
//! event features. Event features are themselves laid out as
//!
//! ```text
//! [ purchaser one-hot | timezone one-hot | auction type one-hot | bag of words ]
//! ```
//!
//! Event vectors are indexed in event-feature space `[0, M)`; instance vectors
//! in the full space `[0, S + M)`, with the event block starting at `S`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::SparseVector;

pub const SCHEMA_VERSION: u32 = 1;

pub const TIMEZONE_BLOCK: &str = "timezone";
pub const AUCTION_TYPE_BLOCK: &str = "auction_type";
pub const AUCTION_TYPES: [&str; 2] = ["e-auction", "rfq"];

/// One event as it appears in a JSON Lines dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEvent {
    pub event_id: String,
    pub purchaser_id: String,
    pub timezone: String,
    pub auction_type: String,
    pub description: String,
    #[serde(default)]
    pub suppliers: Vec<String>,
}

impl RawEvent {
    /// Value of a named categorical block for this event.
    pub fn categorical(&self, block: &str) -> Option<&str> {
        match block {
            TIMEZONE_BLOCK => Some(&self.timezone),
            AUCTION_TYPE_BLOCK => Some(&self.auction_type),
            _ => None,
        }
    }
}

/// Lowercases, splits on non-alphanumeric characters and drops tokens shorter than 2.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalBlock {
    pub name: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BowWeighting {
    #[default]
    Counts,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncodeWarning {
    UnknownPurchaser(String),
    UnknownLevel { block: String, level: String },
}

impl std::fmt::Display for EncodeWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EncodeWarning::UnknownPurchaser(p) => {
                write!(f, "unknown purchaser `{}` encoded as all-zeros", p)
            }
            EncodeWarning::UnknownLevel { block, level } => {
                write!(f, "unknown {} level `{}` encoded as all-zeros", block, level)
            }
        }
    }
}

/// An event vector together with any cold-start fallbacks applied while encoding it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedEvent {
    pub vector: SparseVector<f64>,
    pub warnings: Vec<EncodeWarning>,
}

#[derive(Serialize, Deserialize)]
struct SchemaDocument {
    version: u32,
    suppliers: Vec<String>,
    purchasers: Vec<String>,
    categorical_blocks: Vec<CategoricalBlock>,
    vocabulary: Vec<String>,
    bow_weighting: BowWeighting,
}

/// Fixed layout of the global sparse feature space.
#[derive(Debug, Clone)]
pub struct FeatureSchema {
    suppliers: Vec<String>,
    purchasers: Vec<String>,
    categorical_blocks: Vec<CategoricalBlock>,
    vocabulary: Vec<String>,
    bow_weighting: BowWeighting,
    supplier_lookup: HashMap<String, usize>,
    purchaser_lookup: HashMap<String, usize>,
    level_lookup: Vec<HashMap<String, usize>>,
    token_lookup: HashMap<String, usize>,
    categorical_offsets: Vec<usize>,
    vocabulary_offset: usize,
}

impl PartialEq for FeatureSchema {
    fn eq(&self, other: &Self) -> bool {
        self.suppliers == other.suppliers
            && self.purchasers == other.purchasers
            && self.categorical_blocks == other.categorical_blocks
            && self.vocabulary == other.vocabulary
            && self.bow_weighting == other.bow_weighting
    }
}

fn index_of(items: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut lookup = HashMap::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        if lookup.insert(item.clone(), i).is_some() {
            return Err(Error::Schema(format!("duplicate {} `{}`", what, item)));
        }
    }
    Ok(lookup)
}

impl FeatureSchema {
    /// Assembles a schema from explicit blocks.
    pub fn from_parts(
        suppliers: Vec<String>,
        purchasers: Vec<String>,
        categorical_blocks: Vec<CategoricalBlock>,
        vocabulary: Vec<String>,
        bow_weighting: BowWeighting,
    ) -> Result<Self> {
        let supplier_lookup = index_of(&suppliers, "supplier")?;
        let purchaser_lookup = index_of(&purchasers, "purchaser")?;
        let token_lookup = index_of(&vocabulary, "vocabulary token")?;
        let mut names = BTreeSet::new();
        let mut level_lookup = Vec::with_capacity(categorical_blocks.len());
        let mut categorical_offsets = Vec::with_capacity(categorical_blocks.len());
        let mut offset = purchasers.len();
        for block in &categorical_blocks {
            if !names.insert(block.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate categorical block `{}`",
                    block.name
                )));
            }
            level_lookup.push(index_of(&block.levels, &block.name)?);
            categorical_offsets.push(offset);
            offset += block.levels.len();
        }
        Ok(FeatureSchema {
            suppliers,
            purchasers,
            categorical_blocks,
            vocabulary,
            bow_weighting,
            supplier_lookup,
            purchaser_lookup,
            level_lookup,
            token_lookup,
            categorical_offsets,
            vocabulary_offset: offset,
        })
    }

    /// Derives the schema covering every purchaser, categorical level and
    /// sufficiently frequent token in `events`. Purchasers, levels and
    /// vocabulary are ordered lexicographically; suppliers keep the given order.
    pub fn build(
        events: &[RawEvent],
        suppliers: &[String],
        min_token_count: usize,
        bow_weighting: BowWeighting,
    ) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::Schema("no events".into()));
        }
        if suppliers.is_empty() {
            return Err(Error::Schema("no suppliers".into()));
        }
        let purchasers: BTreeSet<&str> = events.iter().map(|e| e.purchaser_id.as_str()).collect();
        let blocks = [TIMEZONE_BLOCK, AUCTION_TYPE_BLOCK]
            .iter()
            .map(|&name| {
                let levels: BTreeSet<&str> = events
                    .iter()
                    .filter_map(|e| e.categorical(name))
                    .collect();
                CategoricalBlock {
                    name: name.to_string(),
                    levels: levels.into_iter().map(String::from).collect(),
                }
            })
            .collect();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for event in events {
            for token in tokenize(&event.description) {
                *counts.entry(token).or_default() += 1;
            }
        }
        let threshold = min_token_count.max(1);
        let vocabulary = counts
            .into_iter()
            .filter(|&(_, c)| c >= threshold)
            .map(|(t, _)| t)
            .collect();
        Self::from_parts(
            suppliers.to_vec(),
            purchasers.into_iter().map(String::from).collect(),
            blocks,
            vocabulary,
            bow_weighting,
        )
    }

    pub fn supplier_count(&self) -> usize {
        self.suppliers.len()
    }

    pub fn purchaser_count(&self) -> usize {
        self.purchasers.len()
    }

    /// M: purchaser, categorical and vocabulary sizes combined.
    pub fn total_event_features(&self) -> usize {
        self.vocabulary_offset + self.vocabulary.len()
    }

    /// n = S + M.
    pub fn dimension(&self) -> usize {
        self.supplier_count() + self.total_event_features()
    }

    /// Offset of the event-feature block inside instance vectors.
    pub fn event_offset(&self) -> usize {
        self.supplier_count()
    }

    pub fn suppliers(&self) -> &[String] {
        &self.suppliers
    }

    pub fn purchasers(&self) -> &[String] {
        &self.purchasers
    }

    pub fn categorical_blocks(&self) -> &[CategoricalBlock] {
        &self.categorical_blocks
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn bow_weighting(&self) -> BowWeighting {
        self.bow_weighting
    }

    pub fn supplier_index(&self, id: &str) -> Option<usize> {
        self.supplier_lookup.get(id).copied()
    }

    pub fn purchaser_index(&self, id: &str) -> Option<usize> {
        self.purchaser_lookup.get(id).copied()
    }

    /// Event-space offsets of each categorical block, in block order.
    pub fn categorical_offsets(&self) -> &[usize] {
        &self.categorical_offsets
    }

    /// Event-space offset of the bag-of-words block.
    pub fn vocabulary_offset(&self) -> usize {
        self.vocabulary_offset
    }

    /// Encodes the meta-data X_e of an event. Unknown purchasers and levels
    /// leave their block empty and are reported as warnings.
    pub fn encode_event(&self, event: &RawEvent) -> EncodedEvent {
        let mut entries = Vec::new();
        let mut warnings = Vec::new();
        match self.purchaser_lookup.get(&event.purchaser_id) {
            Some(&p) => entries.push((p, 1.0)),
            None => warnings.push(EncodeWarning::UnknownPurchaser(event.purchaser_id.clone())),
        }
        for ((block, lookup), &offset) in self
            .categorical_blocks
            .iter()
            .zip(&self.level_lookup)
            .zip(&self.categorical_offsets)
        {
            let level = event.categorical(&block.name).unwrap_or_default();
            match lookup.get(level) {
                Some(&l) => entries.push((offset + l, 1.0)),
                None => warnings.push(EncodeWarning::UnknownLevel {
                    block: block.name.clone(),
                    level: level.to_string(),
                }),
            }
        }
        let mut bow: BTreeMap<usize, f64> = BTreeMap::new();
        for token in tokenize(&event.description) {
            if let Some(&t) = self.token_lookup.get(&token) {
                *bow.entry(self.vocabulary_offset + t).or_default() += 1.0;
            }
        }
        entries.extend(bow.into_iter().map(|(i, c)| match self.bow_weighting {
            BowWeighting::Counts => (i, c),
            BowWeighting::Binary => (i, 1.0),
        }));
        EncodedEvent {
            vector: SparseVector::from_unsorted(entries),
            warnings,
        }
    }

    /// x = [1_s X_e].
    pub fn encode_instance<T: Scalar>(
        &self,
        supplier: usize,
        event_vec: &SparseVector<T>,
    ) -> Result<SparseVector<T>> {
        let mut out = SparseVector::new();
        self.encode_instance_into(supplier, event_vec, &mut out)?;
        Ok(out)
    }

    pub(crate) fn encode_instance_into<T: Scalar>(
        &self,
        supplier: usize,
        event_vec: &SparseVector<T>,
        out: &mut SparseVector<T>,
    ) -> Result<()> {
        let count = self.supplier_count();
        if supplier >= count {
            return Err(Error::SupplierOutOfRange {
                index: supplier,
                count,
            });
        }
        event_vec.check_dimension(self.total_event_features())?;
        out.clear();
        out.push_unchecked(supplier, T::one());
        for &(i, v) in event_vec.entries() {
            out.push_unchecked(count + i, v);
        }
        Ok(())
    }

    /// Recovers the supplier index from an instance vector.
    pub fn decode_supplier<T: Scalar>(&self, instance: &SparseVector<T>) -> Option<usize> {
        let mut hits = instance
            .entries()
            .iter()
            .take_while(|&&(i, _)| i < self.supplier_count());
        match (hits.next(), hits.next()) {
            (Some(&(s, _)), None) => Some(s),
            _ => None,
        }
    }

    /// Schema keeping only the supplier and purchaser blocks.
    pub fn purchaser_only(&self) -> FeatureSchema {
        Self::from_parts(
            self.suppliers.clone(),
            self.purchasers.clone(),
            Vec::new(),
            Vec::new(),
            self.bow_weighting,
        )
        .expect("subset of a valid schema is valid")
    }

    /// Same layout with a reduced supplier block.
    pub(crate) fn with_suppliers(&self, suppliers: Vec<String>) -> FeatureSchema {
        Self::from_parts(
            suppliers,
            self.purchasers.clone(),
            self.categorical_blocks.clone(),
            self.vocabulary.clone(),
            self.bow_weighting,
        )
        .expect("subset of a valid schema is valid")
    }

    fn document(&self) -> SchemaDocument {
        SchemaDocument {
            version: SCHEMA_VERSION,
            suppliers: self.suppliers.clone(),
            purchasers: self.purchasers.clone(),
            categorical_blocks: self.categorical_blocks.clone(),
            vocabulary: self.vocabulary.clone(),
            bow_weighting: self.bow_weighting,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.document()).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SchemaDocument = serde_json::from_str(text)?;
        if doc.version != SCHEMA_VERSION {
            return Err(Error::Version {
                found: doc.version,
                expected: SCHEMA_VERSION,
            });
        }
        Self::from_parts(
            doc.suppliers,
            doc.purchasers,
            doc.categorical_blocks,
            doc.vocabulary,
            doc.bow_weighting,
        )
    }

    /// SHA-256 of the compact schema document, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.document()).expect("schema serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(purchaser: &str, tz: &str, description: &str) -> RawEvent {
        RawEvent {
            event_id: format!("{}-{}", purchaser, description.len()),
            purchaser_id: purchaser.into(),
            timezone: tz.into(),
            auction_type: "rfq".into(),
            description: description.into(),
            suppliers: vec![],
        }
    }

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{}{}", prefix, i)).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Road Freight EU-West 2021"),
            vec!["road", "freight", "eu", "west", "2021"]
        );
        assert!(tokenize("").is_empty());
        assert!(tokenize("a,b,,c").is_empty());
        assert_eq!(tokenize("lane lane"), vec!["lane", "lane"]);
    }

    #[test]
    fn road_freight_sized_feature_space() {
        // 60 purchasers + 3 timezones + 2 auction types + 430 tokens = 495 event features
        let schema = FeatureSchema::from_parts(
            names("s", 1690),
            names("p", 60),
            vec![
                CategoricalBlock {
                    name: TIMEZONE_BLOCK.into(),
                    levels: names("tz", 3),
                },
                CategoricalBlock {
                    name: AUCTION_TYPE_BLOCK.into(),
                    levels: names("a", 2),
                },
            ],
            names("w", 430),
            BowWeighting::Counts,
        )
        .unwrap();
        assert_eq!(schema.total_event_features(), 495);
        assert_eq!(schema.dimension(), 2185);
    }

    #[test]
    fn minimal_schema() {
        let schema = FeatureSchema::from_parts(
            names("s", 1),
            names("p", 1),
            vec![],
            vec![],
            BowWeighting::Counts,
        )
        .unwrap();
        assert_eq!(schema.dimension(), 2);
    }

    #[test]
    fn token_frequency_threshold() {
        let events = vec![raw("p", "utc", "fast freight"), raw("p", "utc", "fast lanes")];
        let schema = FeatureSchema::build(&events, &names("s", 2), 2, BowWeighting::Counts).unwrap();
        assert_eq!(schema.vocabulary(), &["fast".to_string()]);
    }

    #[test]
    fn build_rejects_empty_and_duplicates() {
        assert!(matches!(
            FeatureSchema::build(&[], &names("s", 2), 1, BowWeighting::Counts),
            Err(Error::Schema(_))
        ));
        let events = vec![raw("p", "utc", "x")];
        let dup = vec!["s".to_string(), "s".to_string()];
        assert!(FeatureSchema::build(&events, &dup, 1, BowWeighting::Counts).is_err());
    }

    #[test]
    fn offsets_are_contiguous() {
        let events = vec![
            raw("p1", "utc", "road freight"),
            raw("p0", "cet", "road lane"),
        ];
        let schema = FeatureSchema::build(&events, &names("s", 3), 1, BowWeighting::Counts).unwrap();
        assert_eq!(schema.purchaser_count(), 2);
        // timezone block then auction type block
        assert_eq!(schema.categorical_offsets(), &[2, 4]);
        assert_eq!(schema.vocabulary_offset(), 5);
        assert_eq!(schema.total_event_features(), 5 + 3);
    }

    #[test]
    fn one_hot_event_with_empty_description() {
        let events = vec![
            raw("p0", "a", ""),
            raw("p1", "b", ""),
            raw("p1", "c", "words here"),
        ];
        let schema = FeatureSchema::build(&events, &names("s", 1), 1, BowWeighting::Counts).unwrap();
        let mut event = raw("p0", "b", "");
        event.auction_type = "unknown".into();
        let encoded = schema.encode_event(&event);
        assert_eq!(encoded.vector.nnz(), 2);
        assert!(encoded.vector.entries().iter().all(|&(_, v)| v == 1.0));
        assert_eq!(encoded.warnings.len(), 1);
    }

    #[test]
    fn bag_of_words_counts_and_binary() {
        let events = vec![raw("p", "utc", "freight lane")];
        let schema = FeatureSchema::build(&events, &names("s", 1), 1, BowWeighting::Counts).unwrap();
        let encoded = schema.encode_event(&raw("p", "utc", "freight freight lane"));
        let bow = encoded.vector.restrict(schema.vocabulary_offset()..schema.total_event_features());
        let values: Vec<f64> = bow.entries().iter().map(|&(_, v)| v).collect();
        // vocabulary is sorted: ["freight", "lane"]
        assert_eq!(values, vec![2.0, 1.0]);

        let binary = FeatureSchema::build(&events, &names("s", 1), 1, BowWeighting::Binary).unwrap();
        let encoded = binary.encode_event(&raw("p", "utc", "freight freight lane"));
        assert!(encoded.vector.entries().iter().all(|&(_, v)| v == 1.0));
    }

    #[test]
    fn unknown_purchaser_zeroes_only_its_block() {
        let events = vec![raw("p0", "utc", "road")];
        let schema = FeatureSchema::build(&events, &names("s", 1), 1, BowWeighting::Counts).unwrap();
        let known = schema.encode_event(&raw("p0", "utc", "road"));
        let unknown = schema.encode_event(&raw("stranger", "utc", "road"));
        assert_eq!(
            unknown.warnings,
            vec![EncodeWarning::UnknownPurchaser("stranger".into())]
        );
        assert_eq!(
            unknown.vector.entries(),
            &known.vector.entries()[1..],
            "remaining blocks unaffected"
        );
    }

    #[test]
    fn instance_concatenation() {
        let schema = FeatureSchema::from_parts(
            names("s", 3),
            names("p", 1),
            vec![],
            vec![],
            BowWeighting::Counts,
        )
        .unwrap();
        let empty = SparseVector::<f64>::new();
        assert_eq!(schema.encode_instance(0, &empty).unwrap().entries(), &[(0, 1.0)]);
        let event = SparseVector::from_entries(vec![(0, 1.0)]).unwrap();
        assert_eq!(
            schema.encode_instance(2, &event).unwrap().entries(),
            &[(2, 1.0), (3, 1.0)]
        );
        assert!(matches!(
            schema.encode_instance(3, &event),
            Err(Error::SupplierOutOfRange { index: 3, count: 3 })
        ));
    }

    #[test]
    fn json_round_trip_and_hash() {
        let events = vec![raw("p1", "utc", "road freight"), raw("p0", "cet", "lane")];
        let schema = FeatureSchema::build(&events, &names("s", 3), 1, BowWeighting::Counts).unwrap();
        let back = FeatureSchema::from_json(&schema.to_json()).unwrap();
        assert_eq!(back, schema);
        assert_eq!(back.hash(), schema.hash());
        assert_ne!(schema.purchaser_only().hash(), schema.hash());
    }
}
