//! Top-k ranking metrics for cold-start events.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::sparse::SparseVector;

pub const DEFAULT_KS: [usize; 5] = [1, 3, 5, 10, 20];

/// Anything that can score every supplier of a schema for one event.
pub trait Recommender: Send + Sync {
    /// One score per supplier, in supplier index order.
    fn score_suppliers(&self, schema: &FeatureSchema, event_vec: &SparseVector<f64>)
        -> Result<Vec<f64>>;
}

impl<F> Recommender for F
where
    F: Fn(&FeatureSchema, &SparseVector<f64>) -> Result<Vec<f64>> + Send + Sync,
{
    fn score_suppliers(
        &self,
        schema: &FeatureSchema,
        event_vec: &SparseVector<f64>,
    ) -> Result<Vec<f64>> {
        self(schema, event_vec)
    }
}

/// Supplier indices by descending score, ties broken by ascending index.
pub fn rank_suppliers(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(supplier) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore { supplier });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// The k-sized ordered recommendation list TopK_e of one event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub event_id: String,
    ranked_suppliers: Vec<usize>,
}

impl RankedList {
    pub fn new(event_id: impl Into<String>, ranked_suppliers: Vec<usize>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(ranked_suppliers.len());
        if let Some(dup) = ranked_suppliers.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("supplier {} ranked twice", dup)));
        }
        if ranked_suppliers.is_empty() {
            return Err(Error::Config("ranked list must hold at least one supplier".into()));
        }
        Ok(RankedList {
            event_id: event_id.into(),
            ranked_suppliers,
        })
    }

    pub fn k(&self) -> usize {
        self.ranked_suppliers.len()
    }

    pub fn suppliers(&self) -> &[usize] {
        &self.ranked_suppliers
    }

    pub fn precision(&self, ground_truth: &[usize]) -> f64 {
        precision_at_k(&self.ranked_suppliers, self.k(), ground_truth)
    }

    pub fn recall(&self, ground_truth: &[usize]) -> f64 {
        recall_at_k(&self.ranked_suppliers, ground_truth)
    }

    pub fn ndcg(&self, ground_truth: &[usize]) -> f64 {
        ndcg_at_k(&self.ranked_suppliers, self.k(), ground_truth)
    }
}

fn hits(topk: &[usize], ground_truth: &[usize]) -> usize {
    topk.iter()
        .filter(|s| ground_truth.contains(s))
        .count()
}

/// |TopK ∩ S_e| / k. `topk` may be shorter than `k` when fewer suppliers exist.
pub fn precision_at_k(topk: &[usize], k: usize, ground_truth: &[usize]) -> f64 {
    hits(topk, ground_truth) as f64 / k as f64
}

/// |TopK ∩ S_e| / |S_e|.
pub fn recall_at_k(topk: &[usize], ground_truth: &[usize]) -> f64 {
    hits(topk, ground_truth) as f64 / ground_truth.len() as f64
}

pub fn dcg_at_k(topk: &[usize], ground_truth: &[usize]) -> f64 {
    topk.iter()
        .enumerate()
        .filter(|(_, s)| ground_truth.contains(s))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// DCG@k over the ideal DCG, which has min(k, |S_e|) hits.
pub fn ndcg_at_k(topk: &[usize], k: usize, ground_truth: &[usize]) -> f64 {
    let ideal: f64 = (0..k.min(ground_truth.len()))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    if ideal == 0.0 {
        return 0.0;
    }
    dcg_at_k(topk, ground_truth) / ideal
}

/// Mean metrics over the evaluated events of a fold at one cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_ndcg: f64,
    pub n_events_evaluated: usize,
    /// Test events skipped because nobody participated in them.
    pub n_events_excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Recall,
    Ndcg,
}

impl Metric {
    pub fn of(self, report: &MetricsReport) -> f64 {
        match self {
            Metric::Precision => report.mean_precision,
            Metric::Recall => report.mean_recall,
            Metric::Ndcg => report.mean_ndcg,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
        }
    }

    pub const ALL: [Metric; 3] = [Metric::Precision, Metric::Recall, Metric::Ndcg];
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "precision" => Ok(Metric::Precision),
            "recall" => Ok(Metric::Recall),
            "ndcg" => Ok(Metric::Ndcg),
            other => Err(Error::Config(format!("unknown metric `{}`", other))),
        }
    }
}

/// Ranks all suppliers for every test event and averages the metrics per cutoff.
///
/// Events with an empty participant set are excluded and tallied.
pub fn evaluate_fold<R: Recommender + ?Sized>(
    recommender: &R,
    dataset: &InteractionDataset,
    test_events: &[usize],
    ks: &[usize],
) -> Result<Vec<MetricsReport>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("cutoffs must be nonempty and at least 1".into()));
    }
    let mut sums = vec![[0.0f64; 3]; ks.len()];
    let mut evaluated = 0;
    let mut excluded = 0;
    for &e in test_events {
        let event = dataset.event(e);
        if event.participants.is_empty() {
            excluded += 1;
            continue;
        }
        let scores = recommender.score_suppliers(dataset.schema(), &event.features)?;
        if scores.len() != dataset.n_suppliers() {
            return Err(Error::Config(format!(
                "recommender returned {} scores for {} suppliers",
                scores.len(),
                dataset.n_suppliers()
            )));
        }
        let ranking = rank_suppliers(&scores)?;
        let truth = &event.participants;
        for (sum, &k) in sums.iter_mut().zip(ks) {
            let topk = &ranking[..k.min(ranking.len())];
            sum[0] += precision_at_k(topk, k, truth);
            sum[1] += recall_at_k(topk, truth);
            sum[2] += ndcg_at_k(topk, k, truth);
        }
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::EmptyDataset(
            "no test event with participants to evaluate".into(),
        ));
    }
    let n = evaluated as f64;
    Ok(ks
        .iter()
        .zip(sums)
        .map(|(&k, [p, r, g])| MetricsReport {
            k,
            mean_precision: p / n,
            mean_recall: r / n,
            mean_ndcg: g / n,
            n_events_evaluated: evaluated,
            n_events_excluded: excluded,
        })
        .collect())
}

/// Arithmetic mean of per-fold reports sharing the same cutoffs.
pub fn mean_reports(folds: &[Vec<MetricsReport>]) -> Vec<MetricsReport> {
    let Some(first) = folds.first() else {
        return Vec::new();
    };
    let n = folds.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let col = || folds.iter().map(move |f| &f[j]);
            MetricsReport {
                k: r.k,
                mean_precision: col().map(|x| x.mean_precision).sum::<f64>() / n,
                mean_recall: col().map(|x| x.mean_recall).sum::<f64>() / n,
                mean_ndcg: col().map(|x| x.mean_ndcg).sum::<f64>() / n,
                n_events_evaluated: col().map(|x| x.n_events_evaluated).sum(),
                n_events_excluded: col().map(|x| x.n_events_excluded).sum(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at_k(&[1, 2, 3, 4, 5], 5, &[1, 3, 5, 9]), 0.6);
        assert_eq!(precision_at_k(&[1, 2], 2, &[7]), 0.0);
        assert_eq!(precision_at_k(&[1, 2], 2, &[1, 2, 3]), 1.0);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[1, 2, 3], &[1, 3, 8, 9]), 0.5);
        assert_eq!(recall_at_k(&[4, 1, 2], &[1, 2]), 1.0);
        assert_eq!(recall_at_k(&[4], &[1, 2]), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[1, 2, 3], 3, &[1, 2, 3, 4]), 1.0);
        let single_late = ndcg_at_k(&[5, 1], 2, &[1]);
        assert!((single_late - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((single_late - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn ranking_ties_break_by_index() {
        assert_eq!(rank_suppliers(&[1.0, 3.0, 3.0, 2.0]).unwrap(), vec![1, 2, 3, 0]);
        assert!(matches!(
            rank_suppliers(&[1.0, f64::NAN]),
            Err(Error::NonFiniteScore { supplier: 1 })
        ));
    }

    #[test]
    fn ranked_list_rejects_duplicates() {
        assert!(RankedList::new("e", vec![1, 2, 1]).is_err());
        let list = RankedList::new("e", vec![3, 1]).unwrap();
        assert_eq!(list.k(), 2);
        assert_eq!(list.precision(&[1]), 0.5);
    }

    fn arb_ranking() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, usize)> {
        (2usize..15).prop_flat_map(|s| {
            (
                Just((0..s).collect::<Vec<_>>()).prop_shuffle(),
                prop::collection::btree_set(0..s, 1..=s),
                1..=s,
            )
                .prop_map(|(order, truth, k)| (order, truth.into_iter().collect(), k))
        })
    }

    proptest! {
        #[test]
        fn hit_counts_agree((order, truth, k) in arb_ranking()) {
            let topk = &order[..k];
            let h = hits(topk, &truth) as f64;
            prop_assert!((precision_at_k(topk, k, &truth) * k as f64 - h).abs() < 1e-9);
            prop_assert!((recall_at_k(topk, &truth) * truth.len() as f64 - h).abs() < 1e-9);
        }

        #[test]
        fn ndcg_bounds((order, truth, k) in arb_ranking()) {
            let topk = &order[..k];
            let g = ndcg_at_k(topk, k, &truth);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&g));
            let perfect = topk[..k.min(truth.len())].iter().all(|s| truth.contains(s));
            prop_assert_eq!(perfect, (g - 1.0).abs() < 1e-12);
        }

        #[test]
        fn tail_permutation_is_invisible((order, truth, k) in arb_ranking(), seed in any::<u64>()) {
            let mut shuffled = order.clone();
            let tail = &mut shuffled[k..];
            let n = tail.len();
            if n > 1 {
                tail.rotate_left((seed as usize) % n);
            }
            prop_assert_eq!(ndcg_at_k(&order[..k], k, &truth), ndcg_at_k(&shuffled[..k], k, &truth));
            prop_assert_eq!(recall_at_k(&order[..k], &truth), recall_at_k(&shuffled[..k], &truth));
        }

        #[test]
        fn longer_lists_never_lose((order, truth, k) in arb_ranking()) {
            let k2 = (k + 1).min(order.len());
            prop_assert!(recall_at_k(&order[..k2], &truth) >= recall_at_k(&order[..k], &truth));
            prop_assert!(dcg_at_k(&order[..k2], &truth) >= dcg_at_k(&order[..k], &truth));
        }
    }

    #[test]
    fn mean_of_reports() {
        let r = |p| MetricsReport {
            k: 5,
            mean_precision: p,
            mean_recall: 0.0,
            mean_ndcg: 0.0,
            n_events_evaluated: 1,
            n_events_excluded: 0,
        };
        let mean = mean_reports(&[vec![r(0.2)], vec![r(0.6)]]);
        assert!((mean[0].mean_precision - 0.4).abs() < 1e-15);
        assert_eq!(mean[0].n_events_evaluated, 2);
    }
}
