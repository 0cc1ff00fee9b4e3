//! Nested cross-validation over held-out events.
//!
//! Outer folds estimate cold-start performance; inside each outer training
//! set an inner k-fold loop picks the hyperparameter point with the best mean
//! selection metric, which is then retrained on the whole outer training set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;
use std::marker::PhantomData;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::PopularityModel;
use crate::bpr::{train, TrainConfig};
use crate::dataset::{split_indices, InteractionDataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_fold, mean_reports, Metric, MetricsReport, Recommender};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

/// Candidate values for the five tuned FM hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub latent_dims: Vec<usize>,
    pub iteration_counts: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub lambda_regs: Vec<f64>,
    pub negative_counts: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            latent_dims: vec![4, 8, 16],
            iteration_counts: vec![50, 200],
            learning_rates: vec![0.01, 0.05],
            lambda_regs: vec![0.0, 0.01, 0.1],
            negative_counts: vec![1, 5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub latent_dim: usize,
    pub n_iterations: usize,
    pub learning_rate: f64,
    pub lambda_reg: f64,
    pub negatives_per_positive: usize,
}

impl HyperPoint {
    pub fn from_config(config: &TrainConfig) -> Self {
        HyperPoint {
            latent_dim: config.latent_dim,
            n_iterations: config.n_iterations,
            learning_rate: config.learning_rate,
            lambda_reg: config.lambda_reg,
            negatives_per_positive: config.negatives_per_positive,
        }
    }

    /// `base` with this point's hyperparameters and the given seed.
    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            latent_dim: self.latent_dim,
            n_iterations: self.n_iterations,
            learning_rate: self.learning_rate,
            lambda_reg: self.lambda_reg,
            negatives_per_positive: self.negatives_per_positive,
            seed,
            ..base.clone()
        }
    }
}

impl HyperGrid {
    pub fn singleton(point: HyperPoint) -> Self {
        HyperGrid {
            latent_dims: vec![point.latent_dim],
            iteration_counts: vec![point.n_iterations],
            learning_rates: vec![point.learning_rate],
            lambda_regs: vec![point.lambda_reg],
            negative_counts: vec![point.negatives_per_positive],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("latent_dims", self.latent_dims.is_empty()),
            ("iteration_counts", self.iteration_counts.is_empty()),
            ("learning_rates", self.learning_rates.is_empty()),
            ("lambda_regs", self.lambda_regs.is_empty()),
            ("negative_counts", self.negative_counts.is_empty()),
        ];
        match empty.iter().find(|(_, e)| *e) {
            Some((name, _)) => Err(Error::Config(format!("grid list `{}` is empty", name))),
            None => Ok(()),
        }
    }

    /// Cartesian product, last list varying fastest.
    pub fn points(&self) -> Vec<HyperPoint> {
        let mut out = Vec::new();
        for &latent_dim in &self.latent_dims {
            for &n_iterations in &self.iteration_counts {
                for &learning_rate in &self.learning_rates {
                    for &lambda_reg in &self.lambda_regs {
                        for &negatives_per_positive in &self.negative_counts {
                            out.push(HyperPoint {
                                latent_dim,
                                n_iterations,
                                learning_rate,
                                lambda_reg,
                                negatives_per_positive,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// A trained recommender plus its probe-loss trajectory, when it has one.
pub struct Fitted {
    pub recommender: Box<dyn Recommender>,
    pub loss_history: Option<Vec<f64>>,
}

/// Something the harness can train on a subset of events.
pub trait Learner: Sync {
    type Point: Clone + Debug + Serialize + Send + Sync;

    fn fit(
        &self,
        dataset: &InteractionDataset,
        train_events: &[usize],
        point: &Self::Point,
        seed: u64,
    ) -> Result<Fitted>;
}

/// FM trained with BPR; `base` supplies the untuned settings.
#[derive(Debug, Clone)]
pub struct FmLearner<T = f64> {
    pub base: TrainConfig,
    _scalar: PhantomData<T>,
}

impl<T> FmLearner<T> {
    pub fn new(base: TrainConfig) -> Self {
        FmLearner {
            base,
            _scalar: PhantomData,
        }
    }
}

impl<T: Scalar> Learner for FmLearner<T> {
    type Point = HyperPoint;

    fn fit(
        &self,
        dataset: &InteractionDataset,
        train_events: &[usize],
        point: &HyperPoint,
        seed: u64,
    ) -> Result<Fitted> {
        let outcome = train::<T>(dataset, train_events, &point.train_config(&self.base, seed))?;
        Ok(Fitted {
            recommender: Box::new(outcome.params),
            loss_history: Some(outcome.loss_history),
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PopularityLearner;

impl Learner for PopularityLearner {
    type Point = ();

    fn fit(
        &self,
        dataset: &InteractionDataset,
        train_events: &[usize],
        _point: &(),
        _seed: u64,
    ) -> Result<Fitted> {
        Ok(Fitted {
            recommender: Box::new(PopularityModel::train(dataset, train_events)),
            loss_history: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvOptions {
    pub n_outer: usize,
    pub n_inner: usize,
    pub selection_metric: Metric,
    pub selection_k: usize,
    pub ks: Vec<usize>,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            n_outer: 8,
            n_inner: 5,
            selection_metric: Metric::Ndcg,
            selection_k: 10,
            ks: crate::metrics::DEFAULT_KS.to_vec(),
            seed: 0,
        }
    }
}

impl CvOptions {
    fn validate(&self) -> Result<()> {
        if self.n_outer < 2 || self.n_inner < 2 {
            return Err(Error::Config("fold counts must be at least 2".into()));
        }
        if self.selection_k == 0 || self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("cutoffs must be at least 1".into()));
        }
        Ok(())
    }

    fn outer_folds(&self, dataset: &InteractionDataset) -> Result<Vec<Vec<usize>>> {
        dataset.split_events(self.n_outer, derive_seed(self.seed, "outer-folds", &[]))
    }

    fn outer_train_seed(&self, fold: usize) -> u64 {
        derive_seed(self.seed, "outer-train", &[fold as u64])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult<P> {
    pub fold: usize,
    pub chosen: P,
    pub chosen_index: usize,
    /// Mean inner selection metric per grid point; `None` for failed points.
    pub inner_scores: Vec<Option<f64>>,
    pub reports: Vec<MetricsReport>,
    /// Suppliers participating in test events but in no training event.
    pub test_only_suppliers: usize,
    pub initial_probe_loss: Option<f64>,
    pub final_probe_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult<P> {
    pub per_fold: Vec<FoldResult<P>>,
    pub aggregate: Vec<MetricsReport>,
    #[serde(skip)]
    pub trace: CvTrace,
}

/// Fold memberships by event id, one record per outer fold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CvTrace {
    pub folds: Vec<FoldTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub fold: usize,
    pub test: Vec<String>,
    pub train: Vec<String>,
    pub inner: Vec<InnerTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerTrace {
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

impl CvTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for fold in &self.folds {
            out.push_str(&serde_json::to_string(fold).expect("trace serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let folds = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(CvTrace { folds })
    }
}

fn ids(dataset: &InteractionDataset, events: &[usize]) -> Vec<String> {
    events.iter().map(|&e| dataset.event(e).id.clone()).collect()
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let held: BTreeSet<usize> = fold.iter().copied().collect();
    (0..n).filter(|e| !held.contains(e)).collect()
}

fn test_only_suppliers(dataset: &InteractionDataset, train: &[usize], test: &[usize]) -> usize {
    let seen = dataset.participation_counts(train.iter().copied());
    let tested: BTreeSet<usize> = test
        .iter()
        .flat_map(|&e| dataset.event(e).participants.iter().copied())
        .collect();
    tested.into_iter().filter(|&s| seen[s] == 0).count()
}

struct Selection {
    chosen_index: usize,
    inner_scores: Vec<Option<f64>>,
    inner: Vec<InnerTrace>,
}

fn select_point<L: Learner>(
    learner: &L,
    dataset: &InteractionDataset,
    points: &[L::Point],
    outer_train: &[usize],
    fold: usize,
    options: &CvOptions,
) -> Result<Selection> {
    if points.len() == 1 {
        return Ok(Selection {
            chosen_index: 0,
            inner_scores: vec![None],
            inner: Vec::new(),
        });
    }
    let inner_folds = split_indices(
        outer_train,
        options.n_inner,
        derive_seed(options.seed, "inner-folds", &[fold as u64]),
    )?;
    let inner_sets: Vec<(Vec<usize>, Vec<usize>)> = inner_folds
        .iter()
        .map(|validation| {
            let held: BTreeSet<usize> = validation.iter().copied().collect();
            let train = outer_train.iter().copied().filter(|e| !held.contains(e)).collect();
            (train, validation.clone())
        })
        .collect();

    let inner_scores: Vec<Option<f64>> = points
        .par_iter()
        .enumerate()
        .map(|(p, point)| {
            let mut total = 0.0;
            for (i, (train, validation)) in inner_sets.iter().enumerate() {
                let seed = derive_seed(options.seed, "inner-train", &[fold as u64, i as u64, p as u64]);
                let outcome = learner.fit(dataset, train, point, seed).and_then(|fitted| {
                    evaluate_fold(
                        fitted.recommender.as_ref(),
                        dataset,
                        validation,
                        &[options.selection_k],
                    )
                });
                match outcome {
                    Ok(reports) => total += options.selection_metric.of(&reports[0]),
                    Err(e) => {
                        warn!("fold {} point {:?} disqualified: {}", fold, point, e);
                        return None;
                    }
                }
            }
            Some(total / inner_sets.len() as f64)
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (p, score) in inner_scores.iter().enumerate() {
        if let Some(s) = *score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((p, s));
            }
        }
    }
    let (chosen_index, _) = best.ok_or(Error::AllPointsFailed)?;
    Ok(Selection {
        chosen_index,
        inner_scores,
        inner: inner_sets
            .iter()
            .map(|(train, validation)| InnerTrace {
                train: ids(dataset, train),
                validation: ids(dataset, validation),
            })
            .collect(),
    })
}

fn fit_and_evaluate<L: Learner>(
    learner: &L,
    dataset: &InteractionDataset,
    point: &L::Point,
    train_events: &[usize],
    test_events: &[usize],
    seed: u64,
    ks: &[usize],
) -> Result<(Vec<MetricsReport>, Option<Vec<f64>>)> {
    let fitted = learner.fit(dataset, train_events, point, seed)?;
    let reports = evaluate_fold(fitted.recommender.as_ref(), dataset, test_events, ks)?;
    Ok((reports, fitted.loss_history))
}

/// Nested cross-validation of `learner` over the given grid points.
pub fn run_nested_cv<L: Learner>(
    learner: &L,
    dataset: &InteractionDataset,
    points: &[L::Point],
    options: &CvOptions,
) -> Result<CvResult<L::Point>> {
    options.validate()?;
    if points.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let outer = options.outer_folds(dataset)?;
    let results: Vec<(FoldResult<L::Point>, FoldTrace)> = outer
        .par_iter()
        .enumerate()
        .map(|(f, test)| {
            let train_events = complement(dataset.n_events(), test);
            let selection = select_point(learner, dataset, points, &train_events, f, options)?;
            let chosen = points[selection.chosen_index].clone();
            info!("outer fold {}: chose {:?}", f, chosen);
            let (reports, losses) = fit_and_evaluate(
                learner,
                dataset,
                &chosen,
                &train_events,
                test,
                options.outer_train_seed(f),
                &options.ks,
            )?;
            Ok((
                FoldResult {
                    fold: f,
                    chosen,
                    chosen_index: selection.chosen_index,
                    inner_scores: selection.inner_scores,
                    reports,
                    test_only_suppliers: test_only_suppliers(dataset, &train_events, test),
                    initial_probe_loss: losses.as_ref().map(|l| l[0]),
                    final_probe_loss: losses.as_ref().and_then(|l| l.last().copied()),
                },
                FoldTrace {
                    fold: f,
                    test: ids(dataset, test),
                    train: ids(dataset, &train_events),
                    inner: selection.inner,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (per_fold, folds): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let aggregate = mean_reports(&per_fold.iter().map(|r| r.reports.clone()).collect::<Vec<_>>());
    Ok(CvResult {
        per_fold,
        aggregate,
        trace: CvTrace { folds },
    })
}

/// Plain k-fold cross-validation of a single point, with the same fold and
/// seed layout as the outer loop of [`run_nested_cv`].
pub fn run_flat_cv<L: Learner>(
    learner: &L,
    dataset: &InteractionDataset,
    point: &L::Point,
    options: &CvOptions,
) -> Result<Vec<Vec<MetricsReport>>> {
    options.validate()?;
    let outer = options.outer_folds(dataset)?;
    let mut reports = Vec::with_capacity(outer.len());
    for (f, test) in outer.iter().enumerate() {
        let train_events = complement(dataset.n_events(), test);
        let (r, _) = fit_and_evaluate(
            learner,
            dataset,
            point,
            &train_events,
            test,
            options.outer_train_seed(f),
            &options.ks,
        )?;
        reports.push(r);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    TestInOuterTrain { fold: usize, event: String },
    TestInInnerTrain { fold: usize, inner: usize, event: String },
    TestInInnerValidation { fold: usize, inner: usize, event: String },
    TestedMoreThanOnce { event: String, folds: Vec<usize> },
    NeverTested { event: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub folds_checked: usize,
    pub events_seen: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that no outer-test event leaks into its fold's training or inner
/// sets, and that every event is tested exactly once across folds.
pub fn leakage_audit(trace: &CvTrace) -> AuditReport {
    let mut violations = Vec::new();
    let mut tested_in: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for fold in &trace.folds {
        let test: BTreeSet<&str> = fold.test.iter().map(String::as_str).collect();
        for e in &fold.test {
            tested_in.entry(e).or_default().push(fold.fold);
        }
        seen.extend(test.iter().copied());
        for e in fold.train.iter().filter(|e| test.contains(e.as_str())) {
            violations.push(Violation::TestInOuterTrain {
                fold: fold.fold,
                event: e.clone(),
            });
        }
        seen.extend(fold.train.iter().map(String::as_str));
        for (i, inner) in fold.inner.iter().enumerate() {
            for e in inner.train.iter().filter(|e| test.contains(e.as_str())) {
                violations.push(Violation::TestInInnerTrain {
                    fold: fold.fold,
                    inner: i,
                    event: e.clone(),
                });
            }
            for e in inner.validation.iter().filter(|e| test.contains(e.as_str())) {
                violations.push(Violation::TestInInnerValidation {
                    fold: fold.fold,
                    inner: i,
                    event: e.clone(),
                });
            }
        }
    }
    for event in &seen {
        match tested_in.get(event) {
            None => violations.push(Violation::NeverTested {
                event: event.to_string(),
            }),
            Some(folds) if folds.len() > 1 => violations.push(Violation::TestedMoreThanOnce {
                event: event.to_string(),
                folds: folds.clone(),
            }),
            Some(_) => {}
        }
    }
    AuditReport {
        folds_checked: trace.folds.len(),
        events_seen: seen.len(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, GeneratorConfig, IngestOptions};
    use crate::features::FeatureSchema;
    use crate::sparse::SparseVector;

    fn dataset() -> InteractionDataset {
        let config = GeneratorConfig {
            n_events: 40,
            n_suppliers: 30,
            n_purchasers: 6,
            n_regions: 3,
            base_participation_rate: 0.06,
            affinity_boost: 6.0,
            seed: 5,
            ..GeneratorConfig::default()
        };
        generate_synthetic(&config, &IngestOptions::default()).unwrap()
    }

    fn options() -> CvOptions {
        CvOptions {
            n_outer: 4,
            n_inner: 3,
            ks: vec![1, 5],
            selection_k: 5,
            seed: 3,
            ..CvOptions::default()
        }
    }

    /// Point `true` ranks by global popularity, `false` by its reverse.
    struct Rigged {
        counts: Vec<f64>,
    }

    impl Learner for Rigged {
        type Point = bool;

        fn fit(&self, _: &InteractionDataset, _: &[usize], good: &bool, _: u64) -> Result<Fitted> {
            let sign = if *good { 1.0 } else { -1.0 };
            let counts = self.counts.clone();
            let rec = move |_: &FeatureSchema, _: &SparseVector<f64>| -> Result<Vec<f64>> {
                Ok(counts.iter().map(|c| sign * c).collect())
            };
            Ok(Fitted {
                recommender: Box::new(rec),
                loss_history: None,
            })
        }
    }

    #[test]
    fn grid_points_cover_product_in_order() {
        let grid = HyperGrid::default();
        let points = grid.points();
        assert_eq!(points.len(), 3 * 2 * 2 * 3 * 2);
        assert_eq!(points[0].negatives_per_positive, 1);
        assert_eq!(points[1].negatives_per_positive, 5);
        assert_eq!(points[0].latent_dim, 4);
        assert_eq!(points.last().unwrap().latent_dim, 16);
        let mut empty = grid;
        empty.lambda_regs.clear();
        assert!(empty.validate().is_err());
    }

    #[test]
    fn dominant_point_always_chosen() {
        let ds = dataset();
        let counts = ds
            .participation_counts(0..ds.n_events())
            .into_iter()
            .map(|c| c as f64)
            .collect();
        let result = run_nested_cv(&Rigged { counts }, &ds, &[false, true], &options()).unwrap();
        assert_eq!(result.per_fold.len(), 4);
        for fold in &result.per_fold {
            assert!(fold.chosen);
            let s = &fold.inner_scores;
            assert!(s[1].unwrap() > s[0].unwrap());
        }
        assert!(leakage_audit(&result.trace).is_clean());
    }

    #[test]
    fn singleton_grid_equals_flat_cv() {
        let ds = dataset();
        let learner = FmLearner::<f64>::new(TrainConfig::default());
        let point = HyperPoint {
            latent_dim: 4,
            n_iterations: 10,
            learning_rate: 0.05,
            lambda_reg: 0.01,
            negatives_per_positive: 2,
        };
        let nested = run_nested_cv(&learner, &ds, &[point], &options()).unwrap();
        let flat = run_flat_cv(&learner, &ds, &point, &options()).unwrap();
        let nested_reports: Vec<_> = nested.per_fold.iter().map(|f| f.reports.clone()).collect();
        assert_eq!(nested_reports, flat);
        assert!(nested.trace.folds.iter().all(|f| f.inner.is_empty()));
    }

    #[test]
    fn nested_cv_is_deterministic_and_clean() {
        let ds = dataset();
        let learner = FmLearner::<f64>::new(TrainConfig::default());
        let grid = HyperGrid {
            latent_dims: vec![2, 4],
            iteration_counts: vec![5],
            learning_rates: vec![0.05],
            lambda_regs: vec![0.01],
            negative_counts: vec![1],
        };
        let a = run_nested_cv(&learner, &ds, &grid.points(), &options()).unwrap();
        let b = run_nested_cv(&learner, &ds, &grid.points(), &options()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let audit = leakage_audit(&a.trace);
        assert!(audit.is_clean(), "{:?}", audit.violations);
        assert_eq!(audit.events_seen, ds.n_events());
        assert!(a.trace.folds.iter().all(|f| f.inner.len() == 3));
        let back = CvTrace::from_jsonl(&a.trace.to_jsonl()).unwrap();
        assert_eq!(back, a.trace);
    }

    #[test]
    fn audit_reports_injected_leak() {
        let ds = dataset();
        let result = run_nested_cv(&PopularityLearner, &ds, &[()], &options()).unwrap();
        let mut trace = result.trace.clone();
        let leaked = trace.folds[1].test[0].clone();
        trace.folds[1].train.push(leaked.clone());
        let audit = leakage_audit(&trace);
        assert_eq!(
            audit.violations,
            vec![Violation::TestInOuterTrain {
                fold: 1,
                event: leaked
            }]
        );
    }

    #[test]
    fn audit_detects_coverage_gaps() {
        let trace = CvTrace {
            folds: vec![
                FoldTrace {
                    fold: 0,
                    test: vec!["a".into()],
                    train: vec!["b".into(), "c".into()],
                    inner: vec![],
                },
                FoldTrace {
                    fold: 1,
                    test: vec!["a".into()],
                    train: vec!["b".into(), "c".into()],
                    inner: vec![InnerTrace {
                        train: vec!["b".into()],
                        validation: vec!["a".into()],
                    }],
                },
            ],
        };
        let audit = leakage_audit(&trace);
        assert!(audit.violations.contains(&Violation::TestedMoreThanOnce {
            event: "a".into(),
            folds: vec![0, 1]
        }));
        assert!(audit.violations.contains(&Violation::NeverTested { event: "b".into() }));
        assert!(audit.violations.contains(&Violation::TestInInnerValidation {
            fold: 1,
            inner: 0,
            event: "a".into()
        }));
    }

    #[test]
    fn all_failing_points_is_an_error() {
        struct Broken;
        impl Learner for Broken {
            type Point = u8;
            fn fit(&self, _: &InteractionDataset, _: &[usize], _: &u8, _: u64) -> Result<Fitted> {
                Err(Error::NonFinite { learning_rate: 1.0 })
            }
        }
        let ds = dataset();
        assert!(matches!(
            run_nested_cv(&Broken, &ds, &[0, 1], &options()),
            Err(Error::AllPointsFailed)
        ));
    }
}
