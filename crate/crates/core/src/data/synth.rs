use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::euclidean;

/// Outliers are kept further than this many sigmas from every class center.
pub const OUTLIER_EXCLUSION_SIGMAS: f64 = 3.0;

const CENTER_TRIES: usize = 1000;
const RESCALES: usize = 12;
const OUTLIER_TRIES: usize = 10_000;

type Sampler = dyn FnMut(&mut ChaCha8Rng) -> Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierLaw {
    /// Uniform in the bounding box of the centers, widened by the separation.
    UniformBox,
    /// Gaussian blobs around extra centers that belong to no class.
    ShiftedGaussians,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub outlier_count: usize,
    pub cluster_sigma: f64,
    /// Minimum distance between class centers, in units of `cluster_sigma`.
    pub min_center_separation: f64,
    pub outlier_law: OutlierLaw,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 6,
            dim: 32,
            samples_per_class: 300,
            outlier_count: 600,
            cluster_sigma: 1.0,
            min_center_separation: 10.0,
            outlier_law: OutlierLaw::UniformBox,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::Config {
                field: format!("synth.{field}"),
                reason: reason.into(),
            })
        };
        if self.num_classes == 0 {
            return bad("num_classes", "must be >= 1");
        }
        if self.dim == 0 {
            return bad("dim", "must be >= 1");
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class", "must be >= 1");
        }
        if !(self.cluster_sigma > 0.0 && self.cluster_sigma.is_finite()) {
            return bad("cluster_sigma", "must be > 0");
        }
        if !(self.min_center_separation > 0.0 && self.min_center_separation.is_finite()) {
            return bad("min_center_separation", "must be > 0");
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draws `count` points with pairwise (and to `avoid`) distance at least
/// `min_dist`, widening the spread when the rejection budget runs out.
fn separated_centers(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
    min_dist: f64,
    avoid: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut spread = min_dist;
    for _ in 0..RESCALES {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
        'next: while centers.len() < count {
            for _ in 0..CENTER_TRIES {
                let c = gaussian(rng, dim, spread);
                if avoid
                    .iter()
                    .chain(&centers)
                    .all(|o| euclidean(o, &c) >= min_dist)
                {
                    centers.push(c);
                    continue 'next;
                }
            }
            break;
        }
        if centers.len() == count {
            return Ok(centers);
        }
        spread *= 1.5;
    }
    Err(Error::Generation(format!(
        "could not place {count} centers {min_dist} apart in {dim} dimensions"
    )))
}

/// Gaussian clusters labelled `0..C`, followed by outliers labelled `-1`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    generate_with_centers(cfg).map(|(ds, _)| ds)
}

/// As [`generate_synthetic`], also returning the class centers.
pub fn generate_with_centers(cfg: &SynthConfig) -> Result<(Dataset, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sigma = cfg.cluster_sigma;
    let sep = cfg.min_center_separation * sigma;
    let centers = separated_centers(&mut rng, cfg.num_classes, cfg.dim, sep, &[])?;

    let n = cfg.num_classes * cfg.samples_per_class + cfg.outlier_count;
    let mut features = Vec::with_capacity(n * cfg.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..cfg.samples_per_class {
            let noise = gaussian(&mut rng, cfg.dim, sigma);
            features.extend(center.iter().zip(noise).map(|(m, e)| m + e));
            labels.push(c as i64);
        }
    }

    let exclusion = OUTLIER_EXCLUSION_SIGMAS * sigma;
    let outside = |x: &[f64]| centers.iter().all(|c| euclidean(c, x) > exclusion);
    let mut draw: Box<Sampler> = match cfg.outlier_law {
        OutlierLaw::UniformBox => {
            let (lo, hi): (Vec<f64>, Vec<f64>) = (0..cfg.dim)
                .map(|k| {
                    let vals = centers.iter().map(|c| c[k]);
                    let lo = vals.clone().fold(f64::INFINITY, f64::min) - sep;
                    let hi = vals.fold(f64::NEG_INFINITY, f64::max) + sep;
                    (lo, hi)
                })
                .unzip();
            Box::new(move |rng| {
                lo.iter()
                    .zip(&hi)
                    .map(|(&a, &b)| rng.random_range(a..b))
                    .collect()
            })
        }
        OutlierLaw::ShiftedGaussians => {
            let foreign = if cfg.outlier_count > 0 {
                separated_centers(&mut rng, cfg.num_classes.max(1), cfg.dim, sep, &centers)?
            } else {
                Vec::new()
            };
            Box::new(move |rng| {
                let c = &foreign[rng.random_range(0..foreign.len())];
                let noise = gaussian(rng, c.len(), sigma);
                c.iter().zip(noise).map(|(m, e)| m + e).collect()
            })
        }
    };
    for _ in 0..cfg.outlier_count {
        let mut placed = false;
        for _ in 0..OUTLIER_TRIES {
            let x = draw(&mut rng);
            if outside(&x) {
                features.extend(x);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(
                "could not place an outlier outside every cluster".into(),
            ));
        }
        labels.push(-1);
    }

    let ids = (0..n).map(|i| format!("s{i:06}")).collect();
    drop(draw);
    let ds = Dataset::with_classes(features, cfg.dim, labels, ids, cfg.num_classes)?;
    Ok((ds, centers))
}
