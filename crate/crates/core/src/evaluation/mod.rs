//! Classification and retrieval metrics over `C + 1` classes.
//!
//! Averages are macro over the classes that have at least one true sample,
//! class `-1` included. Retrieval uses Euclidean neighbors with ties broken by
//! ascending sample index.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{label_to_index, predict_from_probs, Mode, Model};
use crate::numerics::{euclidean, Tensor};

pub const DEFAULT_K: usize = 10;

/// Counts with rows = true label, columns = predicted, both ordered
/// `-1, 0, .., C-1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        let k = num_classes + 1;
        ConfusionMatrix {
            num_classes,
            counts: vec![0; k * k],
        }
    }

    pub fn width(&self) -> usize {
        self.num_classes + 1
    }

    pub fn get(&self, truth: i64, predicted: i64) -> u64 {
        self.counts[label_to_index(truth) * self.width() + label_to_index(predicted)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.width()..(i + 1) * self.width()]
            .iter()
            .sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.width())
            .map(|i| self.counts[i * self.width() + j])
            .sum()
    }

    /// Builds a matrix from raw counts in the row/column order above.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        let k = num_classes + 1;
        if counts.len() != k * k {
            return Err(Error::dim("confusion matrix", &[k, k], &[counts.len()]));
        }
        Ok(ConfusionMatrix {
            num_classes,
            counts,
        })
    }
}

fn check_label(label: i64, num_classes: usize) -> Result<()> {
    if label < -1 || label >= num_classes as i64 {
        return Err(Error::Index {
            context: "label",
            index: label,
            limit: num_classes as i64,
        });
    }
    Ok(())
}

pub fn confusion(preds: &[i64], labels: &[i64], num_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::dim("confusion", &[preds.len()], &[labels.len()]));
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    let w = cm.width();
    for (&p, &t) in preds.iter().zip(labels) {
        check_label(p, num_classes)?;
        check_label(t, num_classes)?;
        cm.counts[label_to_index(t) * w + label_to_index(p)] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: i64,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassStats>,
}

impl ClassificationMetrics {
    pub fn recall_of(&self, label: i64) -> Option<f64> {
        self.per_class
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.recall)
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    if cm.total() == 0 {
        return Err(Error::Domain("metrics of an empty confusion matrix".into()));
    }
    let w = cm.width();
    let per_class: Vec<ClassStats> = (0..w)
        .filter(|&i| cm.row_sum(i) > 0)
        .map(|i| {
            let tp = cm.counts[i * w + i] as f64;
            let support = cm.row_sum(i);
            let predicted = cm.col_sum(i);
            let recall = tp / support as f64;
            let precision = if predicted == 0 {
                0.0
            } else {
                tp / predicted as f64
            };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassStats {
                label: i as i64 - 1,
                support,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassStats) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    let recall = mean(|c| c.recall);
    Ok(ClassificationMetrics {
        balanced_accuracy: recall,
        precision: mean(|c| c.precision),
        recall,
        f1: mean(|c| c.f1),
        per_class,
    })
}

/// Average precision of one ranking given relevance flags in score order.
fn average_precision(relevant_in_rank_order: impl Iterator<Item = bool>) -> Option<f64> {
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, rel) in relevant_in_rank_order.enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Per class, ranks all samples by that class's probability (descending,
/// ties by index) and averages precision at each positive; the result is the
/// mean over classes that have positives.
pub fn mean_average_precision(probs: &Tensor, labels: &[i64]) -> Result<f64> {
    let (n, k) = probs.dims2()?;
    if labels.len() != n {
        return Err(Error::dim(
            "mean_average_precision",
            &[n, k],
            &[labels.len()],
        ));
    }
    for &l in labels {
        check_label(l, k.saturating_sub(1))?;
    }
    let mut aps = Vec::new();
    for class in 0..k {
        let score = |i: usize| probs.data()[i * k + class];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
        if let Some(ap) =
            average_precision(order.iter().map(|&i| label_to_index(labels[i]) == class))
        {
            aps.push(ap);
        }
    }
    if aps.is_empty() {
        return Err(Error::Domain("no positive samples for any class".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub precision_at_k: f64,
    pub map_at_k: f64,
}

/// Indices of the `k` nearest rows to `q` (itself excluded).
fn nearest(embeddings: &Tensor, q: usize, k: usize) -> Vec<usize> {
    let n = embeddings.shape()[0];
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != q)
        .map(|j| (euclidean(embeddings.row(q), embeddings.row(j)), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Precision@k and mAP@k over Euclidean neighbors.
///
/// AP@k of a query is normalized by `min(k, R)` with `R` the number of other
/// points sharing its label; queries with `R = 0` are left out of mAP@k
/// (which is 0 if no query qualifies) but still count for precision@k.
pub fn retrieval_at_k(embeddings: &Tensor, labels: &[i64], k: usize) -> Result<RetrievalMetrics> {
    let (n, _) = embeddings.dims2()?;
    if labels.len() != n {
        return Err(Error::dim("retrieval_at_k", &[n], &[labels.len()]));
    }
    if k == 0 || k >= n {
        return Err(Error::Domain(format!(
            "k must satisfy 1 <= k < N, got k = {k}, N = {n}"
        )));
    }
    let (mut prec_sum, mut ap_sum, mut ap_count) = (0.0, 0.0, 0usize);
    for q in 0..n {
        let rel: Vec<bool> = nearest(embeddings, q, k)
            .iter()
            .map(|&j| labels[j] == labels[q])
            .collect();
        prec_sum += rel.iter().filter(|&&r| r).count() as f64 / k as f64;
        let r_q = labels.iter().filter(|&&l| l == labels[q]).count() - 1;
        if r_q == 0 {
            continue;
        }
        let (mut hits, mut sum) = (0usize, 0.0);
        for (i, &r) in rel.iter().enumerate() {
            if r {
                hits += 1;
                sum += hits as f64 / (i + 1) as f64;
            }
        }
        ap_sum += sum / k.min(r_q) as f64;
        ap_count += 1;
    }
    Ok(RetrievalMetrics {
        precision_at_k: prec_sum / n as f64,
        map_at_k: if ap_count == 0 {
            0.0
        } else {
            ap_sum / ap_count as f64
        },
    })
}

/// Table of headline metrics, serialized with snake_case keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(rename = "map")]
    pub mean_average_precision: f64,
    pub precision_at_k: f64,
    pub map_at_k: f64,
    pub k: usize,
    pub per_class: Vec<ClassStats>,
}

impl MetricsReport {
    pub fn recall_of(&self, label: i64) -> Option<f64> {
        self.per_class
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.recall)
    }
}

/// Runs one eval-mode forward pass over `dataset` and assembles every metric.
pub fn evaluate(model: &Model, dataset: &Dataset, k: usize) -> Result<MetricsReport> {
    if model.mode() != Mode::Eval {
        return Err(Error::Contract(
            "evaluate requires a model in eval mode".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::Domain("evaluate on an empty dataset".into()));
    }
    let (embeddings, probs) = model.infer(&dataset.feature_matrix())?;
    metrics_from_outputs(
        &embeddings,
        &probs,
        dataset.labels(),
        model.config().num_classes,
        k,
    )
}

/// Metric suite from precomputed embeddings and probabilities.
pub fn metrics_from_outputs(
    embeddings: &Tensor,
    probs: &Tensor,
    labels: &[i64],
    num_classes: usize,
    k: usize,
) -> Result<MetricsReport> {
    let preds = predict_from_probs(probs);
    let cls = classification_metrics(&confusion(&preds, labels, num_classes)?)?;
    let map = mean_average_precision(probs, labels)?;
    let ret = retrieval_at_k(embeddings, labels, k)?;
    Ok(MetricsReport {
        balanced_accuracy: cls.balanced_accuracy,
        f1: cls.f1,
        precision: cls.precision,
        recall: cls.recall,
        mean_average_precision: map,
        precision_at_k: ret.precision_at_k,
        map_at_k: ret.map_at_k,
        k,
        per_class: cls.per_class,
    })
}

#[cfg(test)]
mod tests;
