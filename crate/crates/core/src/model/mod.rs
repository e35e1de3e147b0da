//! Embedding network and classifier head.
//!
//! The backbone is a plain MLP (`Linear -> LeakyReLU` repeated, then a final
//! `Linear` to the embedding width `d`). The head is
//! `Linear(d, d) -> BatchNorm -> LeakyReLU -> Linear(d, C + 1)`; its first
//! linear layer has no bias because batch normalization removes any
//! per-column shift.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax as softmax_row, BatchStats, Graph, Parameters, Tensor, Var};

const CHECKPOINT_MAGIC: &[u8; 4] = b"QNM1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_hidden")]
    pub backbone_hidden: Vec<usize>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_slope() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.1
}
fn default_bn_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    pub fn new(input_dim: usize, embed_dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            input_dim,
            embed_dim,
            num_classes,
            backbone_hidden: default_hidden(),
            leaky_slope: default_slope(),
            bn_momentum: default_momentum(),
            bn_eps: default_bn_eps(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: format!("model.{field}"),
                reason,
            })
        };
        if self.input_dim == 0 {
            return bad("input_dim", "must be positive".into());
        }
        if self.embed_dim < 2 {
            return bad("embed_dim", format!("must be >= 2, got {}", self.embed_dim));
        }
        if self.num_classes < 2 {
            return bad(
                "num_classes",
                format!("must be >= 2, got {}", self.num_classes),
            );
        }
        if self.backbone_hidden.contains(&0) {
            return bad("backbone_hidden", "hidden widths must be positive".into());
        }
        if !(self.leaky_slope > 0.0) {
            return bad("leaky_slope", "must be > 0".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return bad("bn_momentum", "must lie in (0, 1)".into());
        }
        if !(self.bn_eps > 0.0) {
            return bad("bn_eps", "must be > 0".into());
        }
        Ok(())
    }

    /// Non-fatal configuration concerns.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.embed_dim > self.num_classes + 1 {
            out.push(format!(
                "embed_dim {} exceeds num_classes + 1 = {}; the classifier head may be ill-conditioned",
                self.embed_dim,
                self.num_classes + 1
            ));
        }
        out
    }

    pub fn output_dim(&self) -> usize {
        self.num_classes + 1
    }
}

/// Softmax index of a label: class `-1` sits at index 0, class `c` at `c + 1`.
pub fn label_to_index(label: i64) -> usize {
    (label + 1) as usize
}

pub fn index_to_label(index: usize) -> i64 {
    index as i64 - 1
}

/// Argmax over one probability row mapped to a label; ties go to the lowest index.
pub fn argmax_label(row: &[f64]) -> i64 {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    index_to_label(best)
}

/// Row-wise softmax of a logit matrix.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (rows, cols) = logits.dims2()?;
    if cols == 0 {
        return Err(Error::Domain("softmax needs at least one column".into()));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        data.extend(softmax_row(logits.row(r)));
    }
    Tensor::new(vec![rows, cols], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
        let weight = Tensor::new(vec![fan_in, fan_out], draw(fan_in * fan_out))
            .expect("shape matches")
            .with_grad();
        let bias = bias.then(|| Tensor::vector(draw(fan_out)).with_grad());
        Linear { weight, bias }
    }

    fn forward(
        &self,
        g: &mut Graph,
        params: &mut std::slice::Iter<'_, Var>,
        x: Var,
    ) -> Result<Var> {
        let w = *params.next().expect("bound weight");
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(_) => g.add_row(y, *params.next().expect("bound bias")),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormLayer {
    fn new(width: usize, momentum: f64, eps: f64) -> Self {
        BatchNormLayer {
            gamma: Tensor::filled(vec![width], 1.0).with_grad(),
            beta: Tensor::zeros(vec![width]).with_grad(),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum,
            eps,
        }
    }

    /// Exponential moving average update; the running variance uses the
    /// unbiased batch estimate.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let n = stats.count as f64;
        let correction = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = ((1.0 - m) * *r + m * b * correction).max(f64::MIN_POSITIVE);
        }
    }
}

/// Result of recording a full forward pass on a graph.
#[derive(Debug)]
pub struct Forward {
    /// Parameter leaves, aligned with [`Parameters::parameters`].
    pub params: Vec<Var>,
    pub embeddings: Var,
    pub logits: Var,
    pub bn_stats: Option<BatchStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    backbone: Vec<Linear>,
    head_in: Linear,
    bn: BatchNormLayer,
    head_out: Linear,
    mode: Mode,
}

impl Model {
    /// Builds a model with weights drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        for w in config.warnings() {
            log::warn!("{w}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut widths = vec![config.input_dim];
        widths.extend(&config.backbone_hidden);
        widths.push(config.embed_dim);
        let backbone = widths
            .windows(2)
            .map(|w| Linear::init(&mut rng, w[0], w[1], true))
            .collect();
        let d = config.embed_dim;
        let head_in = Linear::init(&mut rng, d, d, false);
        let head_out = Linear::init(&mut rng, d, config.output_dim(), true);
        let bn = BatchNormLayer::new(d, config.bn_momentum, config.bn_eps);
        Ok(Model {
            config,
            backbone,
            head_in,
            bn,
            head_out,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn train(&mut self) {
        self.mode = Mode::Train;
    }

    pub fn eval(&mut self) {
        self.mode = Mode::Eval;
    }

    pub fn batch_norm(&self) -> &BatchNormLayer {
        &self.bn
    }

    pub fn batch_norm_mut(&mut self) -> &mut BatchNormLayer {
        &mut self.bn
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.backbone.iter().enumerate() {
            names.push(format!("backbone.{i}.weight"));
            if l.bias.is_some() {
                names.push(format!("backbone.{i}.bias"));
            }
        }
        names.extend(
            [
                "head.0.weight",
                "head.bn.gamma",
                "head.bn.beta",
                "head.3.weight",
                "head.3.bias",
            ]
            .map(String::from),
        );
        names
    }

    /// Registers every parameter as a graph leaf in declaration order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.parameters().into_iter().map(|t| g.leaf(t)).collect()
    }

    fn backbone_param_count(&self) -> usize {
        self.backbone
            .iter()
            .map(|l| 1 + l.bias.is_some() as usize)
            .sum()
    }

    pub fn embed_on(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let (rows, cols) = g.value(x).dims2()?;
        if cols != self.config.input_dim {
            return Err(Error::dim(
                "embed",
                &[rows, cols],
                &[rows, self.config.input_dim],
            ));
        }
        let mut it = params[..self.backbone_param_count()].iter();
        let mut h = x;
        let last = self.backbone.len() - 1;
        for (i, layer) in self.backbone.iter().enumerate() {
            h = layer.forward(g, &mut it, h)?;
            if i < last {
                h = g.leaky_relu(h, self.config.leaky_slope)?;
            }
        }
        Ok(h)
    }

    /// Head forward. In train mode the batch statistics are returned so the
    /// caller can update the running buffers.
    pub fn classify_on(
        &self,
        g: &mut Graph,
        params: &[Var],
        emb: Var,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (rows, cols) = g.value(emb).dims2()?;
        if cols != self.config.embed_dim {
            return Err(Error::dim(
                "classify",
                &[rows, cols],
                &[rows, self.config.embed_dim],
            ));
        }
        if rows == 0 {
            return Err(Error::Domain("classify on an empty batch".into()));
        }
        let mut it = params[self.backbone_param_count()..].iter();
        let h = self.head_in.forward(g, &mut it, emb)?;
        let gamma = *it.next().expect("bound gamma");
        let beta = *it.next().expect("bound beta");
        let (h, stats) = match self.mode {
            Mode::Train => {
                let (h, s) = g.batch_norm(h, gamma, beta, self.bn.eps)?;
                (h, Some(s))
            }
            Mode::Eval => (
                g.norm_affine(
                    h,
                    gamma,
                    beta,
                    &self.bn.running_mean,
                    &self.bn.running_var,
                    self.bn.eps,
                )?,
                None,
            ),
        };
        let h = g.leaky_relu(h, self.config.leaky_slope)?;
        let logits = self.head_out.forward(g, &mut it, h)?;
        Ok((logits, stats))
    }

    /// Records embed and classify for `batch` on `g`.
    pub fn forward_on(&self, g: &mut Graph, batch: &Tensor) -> Result<Forward> {
        let params = self.bind(g);
        let x = g.constant(batch.clone());
        let embeddings = self.embed_on(g, &params, x)?;
        let (logits, bn_stats) = self.classify_on(g, &params, embeddings)?;
        Ok(Forward {
            params,
            embeddings,
            logits,
            bn_stats,
        })
    }

    pub fn embed(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g);
        let x = g.constant(batch.clone());
        let e = self.embed_on(&mut g, &params, x)?;
        Ok(strip(g.value(e)))
    }

    /// Logits over the `C + 1` softmax indices.
    pub fn classify(&self, embeddings: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g);
        let e = g.constant(embeddings.clone());
        let (logits, _) = self.classify_on(&mut g, &params, e)?;
        Ok(strip(g.value(logits)))
    }

    /// Embeddings and class probabilities in one pass.
    pub fn infer(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let f = self.forward_on(&mut g, batch)?;
        let probs = softmax(g.value(f.logits))?;
        Ok((strip(g.value(f.embeddings)), probs))
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<i64>> {
        let (_, probs) = self.infer(batch)?;
        Ok(predict_from_probs(&probs))
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [
            c.input_dim,
            c.embed_dim,
            c.num_classes,
            c.backbone_hidden.len(),
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for &h in &c.backbone_hidden {
            w.write_all(&(h as u64).to_le_bytes())?;
        }
        for v in [c.leaky_slope, c.bn_momentum, c.bn_eps] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&c.seed.to_le_bytes())?;
        let mut buffers: Vec<&[f64]> = self.parameters().into_iter().map(Tensor::data).collect();
        buffers.push(&self.bn.running_mean);
        buffers.push(&self.bn.running_var);
        w.write_all(&(buffers.len() as u64).to_le_bytes())?;
        for b in buffers {
            w.write_all(&(b.len() as u64).to_le_bytes())?;
            for x in b {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`Model::save`]. The model comes back in
    /// eval mode.
    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let input_dim = read_u64(&mut r)? as usize;
        let embed_dim = read_u64(&mut r)? as usize;
        let num_classes = read_u64(&mut r)? as usize;
        let n_hidden = read_u64(&mut r)? as usize;
        if n_hidden > 1024 {
            return Err(Error::Format(format!(
                "implausible hidden layer count {n_hidden}"
            )));
        }
        let backbone_hidden = (0..n_hidden)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let config = ModelConfig {
            input_dim,
            embed_dim,
            num_classes,
            backbone_hidden,
            leaky_slope: read_f64(&mut r)?,
            bn_momentum: read_f64(&mut r)?,
            bn_eps: read_f64(&mut r)?,
            seed: read_u64(&mut r)?,
        };
        let mut model = Model::new(config)?;
        let n_buffers = read_u64(&mut r)? as usize;
        let expected = model.parameters().len() + 2;
        if n_buffers != expected {
            return Err(Error::Format(format!(
                "expected {expected} buffers, found {n_buffers}"
            )));
        }
        let mut read_buffer = |dst: &mut [f64]| -> Result<()> {
            let len = read_u64(&mut r)? as usize;
            if len != dst.len() {
                return Err(Error::Format(format!(
                    "buffer length {len}, expected {}",
                    dst.len()
                )));
            }
            for x in dst.iter_mut() {
                *x = read_f64(&mut r)?;
            }
            Ok(())
        };
        for p in model.parameters_mut() {
            read_buffer(p.data_mut())?;
        }
        read_buffer(&mut model.bn.running_mean)?;
        read_buffer(&mut model.bn.running_var)?;
        model.eval();
        Ok(model)
    }
}

impl Parameters for Model {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in self.backbone.iter().chain(std::iter::once(&self.head_in)) {
            out.push(&l.weight);
            out.extend(l.bias.as_ref());
        }
        out.push(&self.bn.gamma);
        out.push(&self.bn.beta);
        out.push(&self.head_out.weight);
        out.extend(self.head_out.bias.as_ref());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self
            .backbone
            .iter_mut()
            .chain(std::iter::once(&mut self.head_in))
        {
            out.push(&mut l.weight);
            out.extend(l.bias.as_mut());
        }
        out.push(&mut self.bn.gamma);
        out.push(&mut self.bn.beta);
        out.push(&mut self.head_out.weight);
        out.extend(self.head_out.bias.as_mut());
        out
    }
}

pub fn predict_from_probs(probs: &Tensor) -> Vec<i64> {
    let rows = probs.shape().first().copied().unwrap_or(0);
    (0..rows).map(|r| argmax_label(probs.row(r))).collect()
}

fn strip(t: &Tensor) -> Tensor {
    let mut t = t.clone();
    t.requires_grad = false;
    t.grad = None;
    t
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests;
