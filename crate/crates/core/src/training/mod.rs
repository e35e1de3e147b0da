//! AdamW, the epoch loop and early-stopped fitting.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{classification_metrics, confusion};
use crate::losses::{combined_loss, LossConfig};
use crate::model::{label_to_index, Mode, Model};
use crate::numerics::{Graph, Parameters, Tensor};
use crate::sampling::{
    class_sampling_weights, mining_fraction, sample_batch, sample_quadruplets, ClassIndex,
    SamplerConfig,
};

/// Consecutive unusable batches tolerated before an epoch is abandoned.
pub const MAX_COMPOSITION_RETRIES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossConfig,
    /// Batch size and tuples per batch live here.
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 20,
            patience: 5,
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            seed: 0,
        }
    }
}

fn config_err(field: &str, reason: String) -> Error {
    Error::Config {
        field: format!("train.{field}"),
        reason,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err(
                "lr",
                format!("must be positive, got {}", self.lr),
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(config_err(
                "weight_decay",
                format!("must be >= 0, got {}", self.weight_decay),
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err(name, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(config_err(
                "adam_eps",
                format!("must be positive, got {}", self.adam_eps),
            ));
        }
        if self.patience < 1 {
            return Err(config_err("patience", "must be >= 1".into()));
        }
        self.loss.validate()?;
        self.sampler.validate()
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamWState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ·(1 − lr·wd) − lr·m̂/(√v̂ + eps)`.
///
/// Every gradient is checked before any parameter is touched.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[&[f64]],
    names: &[String],
    state: &mut AdamWState,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::dim("adamw_step", &[params.len()], &[grads.len()]));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if g.len() != p.numel() || state.m[i].len() != p.numel() {
            return Err(Error::dim("adamw_step", p.shape(), &[g.len()]));
        }
        if g.iter().any(|x| !x.is_finite()) {
            let param = names.get(i).cloned().unwrap_or_else(|| format!("param{i}"));
            return Err(Error::NonFiniteGradient { param });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let decay = 1.0 - config.lr * config.weight_decay;
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta = *theta * decay - config.lr * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub quadruplet_loss: f64,
    pub focal_loss: f64,
    pub mining_fraction: f64,
    pub steps: usize,
    pub seconds: f64,
}

/// Fails unless the labels can feed the quadruplet sampler.
pub fn check_trainable(data: &Dataset) -> Result<()> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &l in data.labels() {
        *counts.entry(l).or_default() += 1;
    }
    let anchors = counts.iter().filter(|(&l, &n)| l >= 0 && n >= 2).count();
    if anchors < 2 || counts.len() < 3 {
        return Err(Error::Data(format!(
            "training needs >= 2 labeled classes with >= 2 samples and >= 3 labels overall; found {} usable classes among {} labels",
            anchors,
            counts.len()
        )));
    }
    Ok(())
}

/// Runs `ceil(N / B)` optimizer steps.
pub fn train_epoch(
    model: &mut Model,
    data: &Dataset,
    config: &TrainConfig,
    epoch: usize,
    state: &mut AdamWState,
    rng: &mut ChaCha8Rng,
) -> Result<EpochReport> {
    if model.mode() != Mode::Train {
        return Err(Error::Contract(
            "train_epoch requires a model in train mode".into(),
        ));
    }
    check_trainable(data)?;
    if data.dim() != model.config().input_dim {
        return Err(Error::dim(
            "train_epoch",
            &[data.dim()],
            &[model.config().input_dim],
        ));
    }
    let start = Instant::now();
    let fraction = mining_fraction(epoch)?;
    let num_classes = model.config().num_classes;
    let index = ClassIndex::new(data.labels(), num_classes)?;
    let weights = class_sampling_weights(num_classes, config.sampler.outlier_share)?;
    let b = config.sampler.batch_size;
    let steps = data.len().div_ceil(b);
    let names = model.parameter_names();
    if state.m.is_empty() {
        *state = AdamWState::new(&model.parameters());
    }

    let (mut total, mut quad_total, mut focal_total) = (0.0, 0.0, 0.0);
    for _ in 0..steps {
        let mut failures = 0;
        let (batch, labels, quads) = loop {
            let batch = sample_batch(&index, &weights, b, rng)?;
            let labels: Vec<i64> = batch.iter().map(|&i| data.labels()[i]).collect();
            match sample_quadruplets(&labels, config.sampler.quads_per_batch, rng) {
                Ok(q) => break (batch, labels, q),
                Err(Error::BatchComposition(reason)) => {
                    failures += 1;
                    if failures > MAX_COMPOSITION_RETRIES {
                        return Err(Error::Data(format!(
                            "{failures} consecutive batches could not form quadruplets: {reason}"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        };

        let mut g = Graph::new();
        let f = model.forward_on(&mut g, &data.batch(&batch))?;
        let probs = g.softmax_rows(f.logits)?;
        let targets: Vec<usize> = labels.iter().map(|&l| label_to_index(l)).collect();
        let loss = combined_loss(
            &mut g,
            f.embeddings,
            &labels,
            &quads,
            probs,
            &targets,
            &config.loss,
            fraction,
            num_classes,
        )?;
        g.backward(loss.total)?;
        total += g.value(loss.total).item();
        quad_total += g.value(loss.quadruplet).item();
        focal_total += g.value(loss.focal).item();

        let grads: Vec<&[f64]> = f
            .params
            .iter()
            .map(|&v| g.grad(v).expect("parameters are gradient leaves"))
            .collect();
        adamw_step(&mut model.parameters_mut(), &grads, &names, state, config)?;
        if let Some(stats) = f.bn_stats {
            model.batch_norm_mut().update_running(&stats);
        }
    }
    let n = steps as f64;
    Ok(EpochReport {
        epoch,
        train_loss: total / n,
        quadruplet_loss: quad_total / n,
        focal_loss: focal_total / n,
        mining_fraction: fraction,
        steps,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_balanced_accuracy: f64,
    pub mining_fraction: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_balanced_accuracy: Option<f64>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes one row per epoch. With `timing` off the `seconds` column is
    /// left out, which makes the file reproducible byte for byte.
    pub fn write_csv<W: Write>(&self, w: W, timing: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        let mut header = vec![
            "epoch",
            "train_loss",
            "val_balanced_accuracy",
            "mining_fraction",
        ];
        if timing {
            header.push("seconds");
        }
        out.write_record(&header).map_err(fmt)?;
        for r in &self.records {
            let mut row = vec![
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_balanced_accuracy.to_string(),
                r.mining_fraction.to_string(),
            ];
            if timing {
                row.push(r.seconds.to_string());
            }
            out.write_record(&row).map_err(fmt)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn balanced_accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    let preds = model.predict(&data.feature_matrix())?;
    let cm = confusion(&preds, data.labels(), model.config().num_classes)?;
    Ok(classification_metrics(&cm)?.balanced_accuracy)
}

/// Trains with early stopping on validation balanced accuracy and returns the
/// best epoch's weights, in eval mode.
pub fn fit(
    mut model: Model,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    let mut history = TrainHistory::default();
    if config.max_epochs == 0 {
        model.eval();
        return Ok((model, history));
    }
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let train_ids: HashSet<&str> = train.ids().iter().map(String::as_str).collect();
    if let Some(id) = val.ids().iter().find(|id| train_ids.contains(id.as_str())) {
        return Err(Error::Contract(format!(
            "sample {id} is in both train and validation sets"
        )));
    }
    check_trainable(train)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamWState::new(&model.parameters());
    let mut best: Option<(f64, Model)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        model.train();
        let report = train_epoch(&mut model, train, config, epoch, &mut state, &mut rng)?;
        model.eval();
        let val_ba = balanced_accuracy(&model, val)?;
        log::info!(
            "epoch {epoch}: loss {:.5} val balanced accuracy {val_ba:.4} mining {:.2}",
            report.train_loss,
            report.mining_fraction
        );
        history.records.push(EpochRecord {
            epoch,
            train_loss: report.train_loss,
            val_balanced_accuracy: val_ba,
            mining_fraction: report.mining_fraction,
            seconds: report.seconds,
        });
        if best.as_ref().is_none_or(|(b, _)| val_ba > *b) {
            best = Some((val_ba, model.clone()));
            history.best_epoch = Some(epoch);
            history.best_val_balanced_accuracy = Some(val_ba);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                history.stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    let (_, mut model) = best.expect("at least one epoch ran");
    model.eval();
    Ok((model, history))
}
