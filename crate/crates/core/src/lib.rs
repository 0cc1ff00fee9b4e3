//! Cold-start supplier recommendation with a sparse-feature factorization
//! machine trained by Bayesian Personalized Ranking.
//!
//! Events play the user role: each historical event contributes its
//! participant suppliers as positives, and new events are scored from their
//! meta-data alone (purchaser, timezone, auction type and a bag of words over
//! the description). Evaluation holds out whole events under nested
//! cross-validation and reports precision, recall and NDCG at k.
//!
//! Model math is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the double-precision types used by the CLI and reports.

pub mod baselines;
pub mod bpr;
pub mod config;
pub mod cv;
pub mod dataset;
pub mod experiment;
pub mod features;
pub mod fm;
pub mod metrics;
pub mod scalar;
pub mod seed;
pub mod sparse;

mod error;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use baselines::{ablate_to_purchaser_only, PopularityModel};
pub use bpr::{pair_gradient, pair_gradient_step, pair_loss, sample_negative, train, TrainConfig};
pub use config::RunConfig;
pub use cv::{leakage_audit, run_flat_cv, run_nested_cv, CvOptions, HyperGrid, HyperPoint};
pub use dataset::{GeneratorConfig, IngestOptions, InteractionDataset};
pub use features::{tokenize, FeatureSchema, RawEvent};
pub use fm::FmParameters;
pub use metrics::{evaluate_fold, MetricsReport, Recommender};
pub use sparse::SparseVector;

/// Double-precision FM parameters.
pub type Fm = FmParameters<f64>;
/// Single-precision FM parameters.
pub type Fm32 = FmParameters<f32>;
/// Double-precision sparse instance.
pub type SparseVec = SparseVector<f64>;
/// Single-precision sparse instance.
pub type SparseVec32 = SparseVector<f32>;
