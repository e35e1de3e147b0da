//! Quadruplet loss with hard-example mining, focal loss, and their weighted
//! combination.
//!
//! Distances are Euclidean (not squared). A quadruplet `(a, p, n1, n2)`
//! contributes
//!
//! ```text
//! max(0, ρ(a,p) − ρ(a,n1) + m1) + max(0, ρ(a,p) − ρ(n1,n2) + m2)
//! ```
//!
//! and mining keeps the mean of the largest `⌈fraction · M⌉` terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};
use crate::sampling::quadruplet_violation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_m1")]
    pub m1: f64,
    #[serde(default = "default_m2")]
    pub m2: f64,
    /// Focal exponent.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Fixed mining fraction; when unset the epoch schedule decides.
    #[serde(default)]
    pub hard_fraction_override: Option<f64>,
}

fn default_m1() -> f64 {
    1.0
}
fn default_m2() -> f64 {
    0.5
}
fn default_gamma() -> f64 {
    2.0
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            m1: default_m1(),
            m2: default_m2(),
            gamma: default_gamma(),
            hard_fraction_override: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m1", self.m1), ("m2", self.m2), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field: format!("loss.{name}"),
                    reason: format!("must be a finite value >= 0, got {v}"),
                });
            }
        }
        if let Some(f) = self.hard_fraction_override {
            check_fraction(f).map_err(|_| Error::Config {
                field: "loss.hard_fraction_override".into(),
                reason: format!("must lie in (0, 1], got {f}"),
            })?;
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        if self.m1 < self.m2 {
            vec![format!(
                "margin m1 = {} is below m2 = {}; m1 >= m2 is expected",
                self.m1, self.m2
            )]
        } else {
            vec![]
        }
    }
}

/// Index tuple into a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Quadruplet {
    pub a: usize,
    pub p: usize,
    pub n1: usize,
    pub n2: usize,
}

impl Quadruplet {
    pub fn new(a: usize, p: usize, n1: usize, n2: usize) -> Self {
        Quadruplet { a, p, n1, n2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QuadrupletSet {
    pub tuples: Vec<Quadruplet>,
}

impl QuadrupletSet {
    pub fn new(tuples: Vec<Quadruplet>) -> Self {
        QuadrupletSet { tuples }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Checks every tuple against the batch labels.
    pub fn validate(&self, labels: &[i64]) -> Result<()> {
        for (i, q) in self.tuples.iter().enumerate() {
            if let Some(rule) = quadruplet_violation(labels, q) {
                return Err(Error::Contract(format!("quadruplet #{i} {q:?}: {rule}")));
            }
        }
        Ok(())
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "hard fraction must lie in (0, 1], got {f}"
        )))
    }
}

/// Number of terms kept at a given mining fraction (at least one).
pub fn hard_count(fraction: f64, total: usize) -> usize {
    // The small slack absorbs products such as 0.7 * 10 = 7.000000000000001.
    ((fraction * total as f64 - 1e-9).ceil() as usize).clamp(1, total.max(1))
}

/// Mean of the hardest quadruplet terms.
pub fn quadruplet_loss(
    g: &mut Graph,
    embeddings: Var,
    labels: &[i64],
    quads: &QuadrupletSet,
    m1: f64,
    m2: f64,
    hard_fraction: f64,
) -> Result<Var> {
    if quads.is_empty() {
        return Err(Error::Domain("quadruplet loss over an empty set".into()));
    }
    check_fraction(hard_fraction)?;
    let (rows, _) = g.value(embeddings).dims2()?;
    if labels.len() != rows {
        return Err(Error::dim("quadruplet_loss", &[rows], &[labels.len()]));
    }
    quads.validate(labels)?;

    let pairs: Vec<(usize, usize)> = quads
        .tuples
        .iter()
        .flat_map(|q| [(q.a, q.p), (q.a, q.n1), (q.n1, q.n2)])
        .collect();
    let dist = g.pair_distances(embeddings, &pairs)?;
    let m = quads.len();
    let role = |k: usize| -> Vec<usize> { (0..m).map(|i| 3 * i + k).collect() };
    let d_ap = g.gather(dist, &role(0))?;
    let d_an = g.gather(dist, &role(1))?;
    let d_nn = g.gather(dist, &role(2))?;

    let t1 = g.sub(d_ap, d_an)?;
    let t1 = g.add_scalar(t1, m1)?;
    let t1 = g.hinge(t1)?;
    let t2 = g.sub(d_ap, d_nn)?;
    let t2 = g.add_scalar(t2, m2)?;
    let t2 = g.hinge(t2)?;
    let terms = g.add(t1, t2)?;

    let values = g.value(terms).data();
    let mut order: Vec<usize> = (0..m).collect();
    // Descending by value, ties by position.
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    order.truncate(hard_count(hard_fraction, m));
    let kept = g.gather(terms, &order)?;
    g.mean(kept)
}

/// Mean of `(1 − p_t)^γ · (−ln p_t)` over the batch, `p_t` floored at 1e-12.
pub fn focal_loss(g: &mut Graph, probs: Var, targets: &[usize], gamma: f64) -> Result<Var> {
    let (rows, cols) = g.value(probs).dims2()?;
    if targets.len() != rows {
        return Err(Error::dim("focal_loss", &[rows, cols], &[targets.len()]));
    }
    if rows == 0 {
        return Err(Error::Domain("focal loss over an empty batch".into()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= cols) {
        return Err(Error::Index {
            context: "focal_loss target",
            index: t as i64,
            limit: cols as i64,
        });
    }
    let p_t = g.pick(probs, targets)?;
    let terms = g.focal(p_t, gamma)?;
    g.mean(terms)
}

/// Normalizer `1 / ln(C)` for the classification term.
pub fn class_weight(num_classes: usize) -> Result<f64> {
    if num_classes < 2 {
        return Err(Error::Domain(format!(
            "class weight needs C >= 2, got {num_classes}"
        )));
    }
    Ok(1.0 / (num_classes as f64).ln())
}

/// Graph handles of the combined objective and its two parts.
#[derive(Clone, Copy, Debug)]
pub struct CombinedLoss {
    pub total: Var,
    pub quadruplet: Var,
    pub focal: Var,
}

/// `L_quad + class_weight(C) · L_focal`.
///
/// `config.hard_fraction_override`, when set, replaces `hard_fraction`.
#[allow(clippy::too_many_arguments)]
pub fn combined_loss(
    g: &mut Graph,
    embeddings: Var,
    labels: &[i64],
    quads: &QuadrupletSet,
    probs: Var,
    targets: &[usize],
    config: &LossConfig,
    hard_fraction: f64,
    num_classes: usize,
) -> Result<CombinedLoss> {
    let fraction = config.hard_fraction_override.unwrap_or(hard_fraction);
    let quadruplet = quadruplet_loss(g, embeddings, labels, quads, config.m1, config.m2, fraction)?;
    let focal = focal_loss(g, probs, targets, config.gamma)?;
    let weighted = g.scale(focal, class_weight(num_classes)?)?;
    let total = g.add(quadruplet, weighted)?;
    Ok(CombinedLoss {
        total,
        quadruplet,
        focal,
    })
}
