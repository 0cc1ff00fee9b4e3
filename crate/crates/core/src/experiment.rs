//! Model comparison under nested cross-validation, and its report formats.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::ablate_to_purchaser_only;
use crate::config::{RunConfig, ScalarKind};
use crate::cv::{
    leakage_audit, run_nested_cv, AuditReport, CvResult, CvTrace, FmLearner, HyperPoint,
    PopularityLearner,
};
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Fm,
    FmAblated,
    Popularity,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fm => "fm",
            ModelKind::FmAblated => "fm-ablated",
            ModelKind::Popularity => "popularity",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fm" => Ok(ModelKind::Fm),
            "fm-ablated" => Ok(ModelKind::FmAblated),
            "popularity" => Ok(ModelKind::Popularity),
            other => Err(Error::Config(format!(
                "unknown model `{}` (expected fm, fm-ablated or popularity)",
                other
            ))),
        }
    }
}

/// Parses a comma-separated model list such as `fm,popularity`.
pub fn parse_models(list: &str) -> Result<Vec<ModelKind>> {
    let models: Vec<ModelKind> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if models.is_empty() {
        return Err(Error::Config("no models requested".into()));
    }
    Ok(models)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub chosen: Option<HyperPoint>,
    pub reports: Vec<MetricsReport>,
    pub test_only_suppliers: usize,
    pub initial_probe_loss: Option<f64>,
    pub final_probe_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model: ModelKind,
    pub per_fold: Vec<FoldSummary>,
    pub aggregate: Vec<MetricsReport>,
    pub audit: AuditReport,
    #[serde(skip)]
    pub trace: CvTrace,
}

impl ModelEvaluation {
    pub fn at_k(&self, k: usize) -> Option<&MetricsReport> {
        self.aggregate.iter().find(|r| r.k == k)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_events: usize,
    pub n_suppliers: usize,
    pub interactions: usize,
    pub selection_metric: Metric,
    pub selection_k: usize,
    pub models: Vec<ModelEvaluation>,
}

fn summarize<P, F>(model: ModelKind, result: CvResult<P>, chosen: F) -> ModelEvaluation
where
    F: Fn(&P) -> Option<HyperPoint>,
{
    let audit = leakage_audit(&result.trace);
    ModelEvaluation {
        model,
        per_fold: result
            .per_fold
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold,
                chosen: chosen(&f.chosen),
                reports: f.reports.clone(),
                test_only_suppliers: f.test_only_suppliers,
                initial_probe_loss: f.initial_probe_loss,
                final_probe_loss: f.final_probe_loss,
            })
            .collect(),
        aggregate: result.aggregate,
        audit,
        trace: result.trace,
    }
}

fn run_fm(
    dataset: &InteractionDataset,
    config: &RunConfig,
    model: ModelKind,
) -> Result<ModelEvaluation> {
    let points = config.grid.points();
    let options = config.cv_options();
    let base = config.train_config();
    let result = match config.scalar {
        ScalarKind::F64 => run_nested_cv(&FmLearner::<f64>::new(base), dataset, &points, &options)?,
        ScalarKind::F32 => run_nested_cv(&FmLearner::<f32>::new(base), dataset, &points, &options)?,
    };
    Ok(summarize(model, result, |p| Some(*p)))
}

/// Runs nested cross-validation for each model on the same outer folds.
pub fn evaluate_models(
    dataset: &InteractionDataset,
    config: &RunConfig,
    models: &[ModelKind],
) -> Result<EvaluationReport> {
    if models.is_empty() {
        return Err(Error::Config("no models requested".into()));
    }
    config.grid.validate()?;
    let mut evaluations = Vec::with_capacity(models.len());
    for &model in models {
        log::info!("evaluating {}", model.name());
        let evaluation = match model {
            ModelKind::Fm => run_fm(dataset, config, model)?,
            ModelKind::FmAblated => run_fm(&ablate_to_purchaser_only(dataset), config, model)?,
            ModelKind::Popularity => {
                let result =
                    run_nested_cv(&PopularityLearner, dataset, &[()], &config.cv_options())?;
                summarize(model, result, |_| None)
            }
        };
        evaluations.push(evaluation);
    }
    Ok(EvaluationReport {
        n_events: dataset.n_events(),
        n_suppliers: dataset.n_suppliers(),
        interactions: dataset.interaction_count(),
        selection_metric: config.cv.selection_metric,
        selection_k: config.cv.selection_k,
        models: evaluations,
    })
}

impl EvaluationReport {
    pub fn audits_clean(&self) -> bool {
        self.models.iter().all(|m| m.audit.is_clean())
    }

    pub fn model(&self, kind: ModelKind) -> Option<&ModelEvaluation> {
        self.models.iter().find(|m| m.model == kind)
    }

    /// `model,fold,k,precision,recall,ndcg,n_events`; fold `mean` rows hold the outer-fold averages.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("model,fold,k,precision,recall,ndcg,n_events\n");
        for m in &self.models {
            let rows = m
                .per_fold
                .iter()
                .flat_map(|f| f.reports.iter().map(move |r| (f.fold.to_string(), r)))
                .chain(m.aggregate.iter().map(|r| ("mean".to_string(), r)));
            for (fold, r) in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    m.model.name(),
                    fold,
                    r.k,
                    r.mean_precision,
                    r.mean_recall,
                    r.mean_ndcg,
                    r.n_events_evaluated
                )
                .expect("write to string");
            }
        }
        out
    }

    /// Long-format `model,k,metric,value` rows of the outer-fold means.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("model,k,metric,value\n");
        for m in &self.models {
            for r in &m.aggregate {
                for metric in Metric::ALL {
                    writeln!(out, "{},{},{},{}", m.model.name(), r.k, metric.name(), metric.of(r))
                        .expect("write to string");
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table of the outer-fold means.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>4} {:>10} {:>10} {:>10}\n",
            "model", "k", "precision", "recall", "ndcg"
        );
        for m in &self.models {
            for r in &m.aggregate {
                writeln!(
                    out,
                    "{:<12} {:>4} {:>10.4} {:>10.4} {:>10.4}",
                    m.model.name(),
                    r.k,
                    r.mean_precision,
                    r.mean_recall,
                    r.mean_ndcg
                )
                .expect("write to string");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cv::HyperGrid;
    use crate::dataset::{generate_synthetic, GeneratorConfig};

    fn small_config() -> RunConfig {
        RunConfig {
            generator: GeneratorConfig {
                n_events: 36,
                n_suppliers: 30,
                n_purchasers: 6,
                n_regions: 3,
                base_participation_rate: 0.06,
                affinity_boost: 6.0,
                ..GeneratorConfig::default()
            },
            grid: HyperGrid {
                latent_dims: vec![4],
                iteration_counts: vec![10],
                learning_rates: vec![0.05],
                lambda_regs: vec![0.0, 0.01],
                negative_counts: vec![2],
            },
            cv: crate::cv::CvOptions {
                n_outer: 3,
                n_inner: 2,
                ks: vec![1, 5],
                ..Default::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn model_names_parse() {
        assert_eq!(
            parse_models("fm,fm-ablated,popularity").unwrap(),
            vec![ModelKind::Fm, ModelKind::FmAblated, ModelKind::Popularity]
        );
        assert!(parse_models("").is_err());
        assert!(parse_models("svd").is_err());
    }

    #[test]
    fn report_formats() {
        let config = small_config();
        let ds = generate_synthetic(&config.generator_config(), &config.ingest_options()).unwrap();
        let report =
            evaluate_models(&ds, &config, &[ModelKind::Fm, ModelKind::Popularity]).unwrap();
        assert!(report.audits_clean());
        let csv = report.metrics_csv();
        // 2 models x (3 folds + mean) x 2 cutoffs
        assert_eq!(csv.lines().count(), 1 + 2 * 4 * 2);
        assert!(csv.contains("\npopularity,mean,5,"));
        assert_eq!(report.plot_csv().lines().count(), 1 + 2 * 2 * 3);
        assert!(report.table().contains("popularity"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["models"][0]["model"], "fm");
        assert!(report.model(ModelKind::Popularity).unwrap().per_fold[0].chosen.is_none());
        assert!(evaluate_models(&ds, &config, &[]).is_err());
    }
}
