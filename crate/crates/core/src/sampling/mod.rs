//! Class-balanced batch sampling, quadruplet construction and the
//! mining-fraction schedule.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{Quadruplet, QuadrupletSet};

/// Largest label vector accepted by [`enumerate_valid_quadruplets`].
pub const ENUMERATION_LIMIT: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_share")]
    pub outlier_share: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_quads")]
    pub quads_per_batch: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_share() -> f64 {
    1.0 / 3.0
}
fn default_batch() -> usize {
    64
}
fn default_quads() -> usize {
    256
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            outlier_share: default_share(),
            batch_size: default_batch(),
            quads_per_batch: default_quads(),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outlier_share > 0.0 && self.outlier_share < 1.0) {
            return Err(Error::Config {
                field: "sampler.outlier_share".into(),
                reason: format!("must lie in (0, 1), got {}", self.outlier_share),
            });
        }
        if self.batch_size < 4 {
            return Err(Error::Config {
                field: "sampler.batch_size".into(),
                reason: format!("must be >= 4, got {}", self.batch_size),
            });
        }
        if self.quads_per_batch == 0 {
            return Err(Error::Config {
                field: "sampler.quads_per_batch".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Sample indices grouped by label, covering `-1, 0, .., C-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassIndex {
    members: BTreeMap<i64, Vec<usize>>,
}

impl ClassIndex {
    pub fn new(labels: &[i64], num_classes: usize) -> Result<Self> {
        let mut members: BTreeMap<i64, Vec<usize>> =
            (-1..num_classes as i64).map(|l| (l, Vec::new())).collect();
        for (i, &l) in labels.iter().enumerate() {
            members
                .get_mut(&l)
                .ok_or(Error::Index {
                    context: "class index label",
                    index: l,
                    limit: num_classes as i64,
                })?
                .push(i);
        }
        Ok(ClassIndex { members })
    }

    pub fn members(&self, label: i64) -> &[usize] {
        self.members.get(&label).map_or(&[], Vec::as_slice)
    }

    /// Labels in ascending order, `-1` first.
    pub fn labels(&self) -> impl Iterator<Item = i64> + '_ {
        self.members.keys().copied()
    }
}

/// Sampling probability per label, `-1` first then `0..C`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelWeights {
    pub labels: Vec<i64>,
    pub probs: Vec<f64>,
}

impl LabelWeights {
    pub fn prob(&self, label: i64) -> Option<f64> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .map(|i| self.probs[i])
    }
}

/// `P(-1) = outlier_share`; the rest is split evenly across the `C` classes.
pub fn class_sampling_weights(num_classes: usize, outlier_share: f64) -> Result<LabelWeights> {
    if num_classes == 0 {
        return Err(Error::Domain(
            "sampling weights need at least one class".into(),
        ));
    }
    if !(outlier_share > 0.0 && outlier_share < 1.0) {
        return Err(Error::Domain(format!(
            "outlier share must lie in (0, 1), got {outlier_share}"
        )));
    }
    let each = (1.0 - outlier_share) / num_classes as f64;
    let mut probs = vec![outlier_share];
    probs.extend(std::iter::repeat_n(each, num_classes));
    Ok(LabelWeights {
        labels: (-1..num_classes as i64).collect(),
        probs,
    })
}

/// Draws `batch_size` indices i.i.d.: a label by weight, then a member
/// uniformly (with replacement across draws).
pub fn sample_batch<R: Rng + ?Sized>(
    index: &ClassIndex,
    weights: &LabelWeights,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    for (&l, &p) in weights.labels.iter().zip(&weights.probs) {
        if p > 0.0 && index.members(l).is_empty() {
            return Err(Error::Config {
                field: "sampler".into(),
                reason: format!("label {l} has sampling weight {p} but no samples"),
            });
        }
    }
    let dist = WeightedIndex::new(&weights.probs)
        .map_err(|e| Error::Domain(format!("sampling weights: {e}")))?;
    Ok((0..batch_size)
        .map(|_| {
            let members = index.members(weights.labels[dist.sample(rng)]);
            members[rng.random_range(0..members.len())]
        })
        .collect())
}

/// The rule a tuple breaks, if any.
pub fn quadruplet_violation(labels: &[i64], q: &Quadruplet) -> Option<&'static str> {
    let idx = [q.a, q.p, q.n1, q.n2];
    if idx.iter().any(|&i| i >= labels.len()) {
        return Some("index out of range");
    }
    for i in 0..4 {
        if idx[i + 1..].contains(&idx[i]) {
            return Some("indices must be distinct");
        }
    }
    let (ca, cp, c1, c2) = (labels[q.a], labels[q.p], labels[q.n1], labels[q.n2]);
    if ca == -1 {
        return Some("anchor must not be an outlier");
    }
    if ca != cp {
        return Some("anchor and positive must share a class");
    }
    if c1 == ca {
        return Some("first negative must differ from the anchor class");
    }
    if c2 == ca || c2 == c1 {
        return Some("second negative must differ from the anchor and first negative classes");
    }
    None
}

pub fn is_valid_quadruplet(labels: &[i64], q: &Quadruplet) -> bool {
    quadruplet_violation(labels, q).is_none()
}

/// Every valid ordered tuple, in lexicographic index order.
pub fn enumerate_valid_quadruplets(labels: &[i64]) -> Result<QuadrupletSet> {
    if labels.len() > ENUMERATION_LIMIT {
        return Err(Error::Domain(format!(
            "exhaustive enumeration is limited to {ENUMERATION_LIMIT} samples, got {}",
            labels.len()
        )));
    }
    let n = labels.len();
    let mut tuples = Vec::new();
    for a in 0..n {
        if labels[a] == -1 {
            continue;
        }
        for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
            for n1 in (0..n).filter(|&i| labels[i] != labels[a]) {
                for n2 in 0..n {
                    let q = Quadruplet::new(a, p, n1, n2);
                    if is_valid_quadruplet(labels, &q) {
                        tuples.push(q);
                    }
                }
            }
        }
    }
    Ok(QuadrupletSet::new(tuples))
}

/// Draws up to `count` valid tuples by role with rejection, giving up after
/// `100 * count` attempts.
pub fn sample_quadruplets<R: Rng + ?Sized>(
    labels: &[i64],
    count: usize,
    rng: &mut R,
) -> Result<QuadrupletSet> {
    let mut by_label: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    // An anchor class needs a positive and two further distinct labels.
    let anchors: Vec<usize> = by_label
        .iter()
        .filter(|(&l, m)| l != -1 && m.len() >= 2 && by_label.len() >= 3)
        .flat_map(|(_, m)| m.iter().copied())
        .collect();
    if anchors.is_empty() {
        return Err(Error::BatchComposition(format!(
            "{} distinct labels, none usable as an anchor class",
            by_label.len()
        )));
    }
    let n = labels.len();
    let mut tuples = Vec::with_capacity(count);
    let mut attempts = 0;
    while tuples.len() < count && attempts < 100 * count {
        attempts += 1;
        let a = anchors[rng.random_range(0..anchors.len())];
        let same = &by_label[&labels[a]];
        let p = same[rng.random_range(0..same.len())];
        let n1 = rng.random_range(0..n);
        let n2 = rng.random_range(0..n);
        let q = Quadruplet::new(a, p, n1, n2);
        if is_valid_quadruplet(labels, &q) {
            tuples.push(q);
        }
    }
    if tuples.is_empty() {
        return Err(Error::BatchComposition(format!(
            "no valid quadruplet found in {attempts} attempts"
        )));
    }
    Ok(QuadrupletSet::new(tuples))
}

/// Mining fraction for a 1-based epoch: 1.0 through epoch 2, then a linear
/// decay to 0.1 at epoch 7, flat afterwards.
pub fn mining_fraction(epoch: usize) -> Result<f64> {
    match epoch {
        0 => Err(Error::Domain("epochs are 1-based".into())),
        1 | 2 => Ok(1.0),
        e if e >= 7 => Ok(0.1),
        e => Ok(1.0 - 0.9 * (e - 2) as f64 / 5.0),
    }
}
