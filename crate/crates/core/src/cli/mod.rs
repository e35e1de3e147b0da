//! The `quadnet` command line: data generation, training, evaluation,
//! embedding analytics and timing.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{self, DistanceKind};
use crate::data::{self, write_table_csv, Dataset, OutlierLaw, SplitRatios, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::{self, DEFAULT_K};
use crate::model::{Model, ModelConfig};
use crate::numerics::Tensor;
use crate::training::{self, TrainConfig};

/// `println!` that tolerates a closed stdout.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const BENCH_BATCH_SIZES: [usize; 5] = [2, 5, 16, 32, 64];

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Dimension { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Format(_)
        | Error::Contract(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

/// Derives an independent seed for one subsystem from the root seed.
pub fn fork_seed(root: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            stratified: true,
        }
    }
}

/// Architecture settings; input width and class count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Defaults to `C + 1`.
    pub embed_dim: Option<usize>,
    pub backbone_hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1, 2, 2);
        ModelSection {
            embed_dim: None,
            backbone_hidden: m.backbone_hidden,
            leaky_slope: m.leaky_slope,
            bn_momentum: m.bn_momentum,
            bn_eps: m.bn_eps,
        }
    }
}

impl ModelSection {
    pub fn build(&self, input_dim: usize, num_classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim,
            embed_dim: self.embed_dim.unwrap_or(num_classes + 1),
            num_classes,
            backbone_hidden: self.backbone_hidden.clone(),
            leaky_slope: self.leaky_slope,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
            seed,
        }
    }
}

/// Everything a run needs. Per-subsystem seeds are derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            k: DEFAULT_K,
            alpha: analytics::DEFAULT_ALPHA,
            beta: analytics::DEFAULT_BETA,
        }
    }
}

impl RunConfig {
    /// Parses JSON; errors carry the path of the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config {
                field: if path == "." { "<root>".into() } else { path },
                reason: e.into_inner().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn ratios(&self) -> Result<SplitRatios> {
        SplitRatios::new(self.split.train, self.split.val, self.split.test).map_err(|e| {
            Error::Config {
                field: "split".into(),
                reason: e.to_string(),
            }
        })
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.ratios()?;
        self.train.validate()?;
        self.model.build(1, 2, 0).validate()?;
        if self.k == 0 {
            return Err(Error::Config {
                field: "k".into(),
                reason: "must be >= 1".into(),
            });
        }
        for (field, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config {
                    field: field.into(),
                    reason: format!("must lie in (0, 1), got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn root_seed(&self) -> u64 {
        self.seed.expect("seed resolved before use")
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "quadnet",
    version,
    about = "Outlier-aware metric learning classifier"
)]
pub struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic clustered dataset with outliers.
    GenData(GenDataArgs),
    /// Train a model with early stopping.
    Train(TrainArgs),
    /// Compute the metric suite on a dataset split.
    Eval(EvalArgs),
    /// Distance statistics, error tables, box plots and an embedding export.
    Analyze(AnalyzeArgs),
    /// Time eval-mode forward passes.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Bin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LawArg {
    UniformBox,
    ShiftedGaussians,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub outliers: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Minimum center distance in units of sigma.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long, value_enum)]
    pub outlier_law: Option<LawArg>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
}

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn records(paths: &[PathBuf]) -> Result<Vec<FileRecord>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileRecord {
                path: p.clone(),
                sha256: file_sha256(p)?,
            })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn create<P: AsRef<Path>>(path: P) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Loads `--config`, applies `--seed`/`--out`, resolves a missing seed from
/// entropy and validates.
fn resolve(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if cfg.seed.is_none() {
        let s: u64 = rand::random();
        log::info!("no seed given, drew {s}");
        cfg.seed = Some(s);
    }
    if common.out.is_some() {
        cfg.paths.out_dir = common.out.clone();
    }
    let out = cfg
        .paths
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.paths.out_dir = Some(out.clone());
    cfg.validate()?;
    fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn finish(
    command: &str,
    cfg: &RunConfig,
    out: &Path,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<()> {
    let manifest = Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.root_seed(),
        config: cfg.clone(),
        inputs: records(inputs)?,
        outputs: records(outputs)?,
    };
    write_json(&out.join(format!("{command}.manifest.json")), &manifest)
}

fn missing(field: &str) -> Error {
    Error::Config {
        field: field.into(),
        reason: "required (flag or config)".into(),
    }
}

fn data_path(flag: &Option<PathBuf>, cfg: &mut RunConfig) -> Result<PathBuf> {
    if flag.is_some() {
        cfg.paths.data = flag.clone();
    }
    cfg.paths.data.clone().ok_or_else(|| missing("paths.data"))
}

fn checkpoint_path(flag: &Option<PathBuf>, cfg: &mut RunConfig, out: &Path) -> PathBuf {
    if flag.is_some() {
        cfg.paths.checkpoint = flag.clone();
    }
    cfg.paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join("model.qnm"))
}

fn select_split(ds: &Dataset, cfg: &RunConfig, which: SplitArg) -> Result<Dataset> {
    if which == SplitArg::All {
        return Ok(ds.clone());
    }
    let seed = fork_seed(cfg.root_seed(), "split");
    let (train, val, test) = data::split(ds, cfg.ratios()?, seed, cfg.split.stratified)?;
    Ok(match which {
        SplitArg::Train => train,
        SplitArg::Val => val,
        _ => test,
    })
}

fn load_model(path: &Path, ds: Option<&Dataset>) -> Result<Model> {
    let model = Model::load(BufReader::new(File::open(path)?))?;
    if let Some(ds) = ds {
        let c = model.config();
        if ds.dim() != c.input_dim {
            return Err(Error::dim(
                "checkpoint input width",
                &[c.input_dim],
                &[ds.dim()],
            ));
        }
        if ds.num_classes() > c.num_classes {
            return Err(Error::dim(
                "checkpoint class count",
                &[c.num_classes],
                &[ds.num_classes()],
            ));
        }
    }
    Ok(model)
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let (mut cfg, out) = resolve(&args.common)?;
    let root = cfg.root_seed();
    let s = &mut cfg.synth;
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(args.classes, s.num_classes);
    set!(args.dim, s.dim);
    set!(args.per_class, s.samples_per_class);
    set!(args.outliers, s.outlier_count);
    set!(args.sigma, s.cluster_sigma);
    set!(args.separation, s.min_center_separation);
    if let Some(law) = args.outlier_law {
        s.outlier_law = match law {
            LawArg::UniformBox => OutlierLaw::UniformBox,
            LawArg::ShiftedGaussians => OutlierLaw::ShiftedGaussians,
        };
    }
    s.seed = fork_seed(root, "data");
    s.validate()?;
    let ds = data::generate_synthetic(s)?;
    let path = out.join(match args.format {
        Format::Csv => "dataset.csv",
        Format::Bin => "dataset.bin",
    });
    ds.save(&path)?;
    cfg.paths.data = Some(path.clone());
    finish("gen-data", &cfg, &out, &[], std::slice::from_ref(&path))?;
    say!(
        "wrote {} samples ({} classes + outliers) to {}",
        ds.len(),
        ds.num_classes(),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub best_epoch: Option<usize>,
    pub best_val_balanced_accuracy: Option<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub test: Option<evaluation::MetricsReport>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (mut cfg, out) = resolve(&args.common)?;
    let data = data_path(&args.data, &mut cfg)?;
    if let Some(v) = args.epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.sampler.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = args.patience {
        cfg.train.patience = v;
    }
    let root = cfg.root_seed();
    cfg.train.seed = fork_seed(root, "train");
    cfg.train.sampler.seed = cfg.train.seed;
    cfg.validate()?;

    let ds = Dataset::load(&data)?;
    training::check_trainable(&ds)?;
    let (train, val, test) = data::split(
        &ds,
        cfg.ratios()?,
        fork_seed(root, "split"),
        cfg.split.stratified,
    )?;
    let model_cfg = cfg
        .model
        .build(ds.dim(), ds.num_classes(), fork_seed(root, "init"));
    let model = Model::new(model_cfg)?;
    log::info!(
        "train {} / val {} / test {}",
        train.len(),
        val.len(),
        test.len()
    );
    let (model, history) = training::fit(model, &train, &val, &cfg.train)?;

    let checkpoint = out.join("model.qnm");
    let mut w = create(&checkpoint)?;
    model.save(&mut w)?;
    w.flush()?;
    let history_path = out.join("history.csv");
    let mut w = create(&history_path)?;
    history.write_csv(&mut w, false)?;
    w.flush()?;
    let timing_path = out.join("timing.csv");
    let mut w = create(&timing_path)?;
    history.write_csv(&mut w, true)?;
    w.flush()?;

    let test_report = if test.is_empty() {
        None
    } else {
        Some(evaluation::evaluate(
            &model,
            &test,
            cfg.k.min(test.len() - 1).max(1),
        )?)
    };
    let summary = TrainSummary {
        best_epoch: history.best_epoch,
        best_val_balanced_accuracy: history.best_val_balanced_accuracy,
        epochs_run: history.len(),
        stopped_early: history.stopped_early,
        train_size: train.len(),
        val_size: val.len(),
        test_size: test.len(),
        test: test_report,
    };
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &summary)?;
    cfg.paths.checkpoint = Some(checkpoint.clone());
    let config_path = out.join("config.json");
    write_json(&config_path, &cfg)?;
    finish(
        "train",
        &cfg,
        &out,
        &[data],
        &[
            checkpoint.clone(),
            history_path,
            timing_path,
            summary_path,
            config_path,
        ],
    )?;
    say!(
        "trained {} epochs, best epoch {:?} (val balanced accuracy {:?}); checkpoint {}",
        summary.epochs_run,
        summary.best_epoch,
        summary.best_val_balanced_accuracy,
        checkpoint.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub metrics: evaluation::MetricsReport,
    pub seed: u64,
    pub split: SplitArg,
    pub samples: usize,
    pub dataset_sha256: String,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (mut cfg, out) = resolve(&args.common)?;
    if let Some(k) = args.k {
        cfg.k = k;
    }
    cfg.validate()?;
    let data = data_path(&args.data, &mut cfg)?;
    let checkpoint = checkpoint_path(&args.checkpoint, &mut cfg, &out);
    let ds = select_split(&Dataset::load(&data)?, &cfg, args.split)?;
    let model = load_model(&checkpoint, Some(&ds))?;
    let report = EvalOutput {
        metrics: evaluation::evaluate(&model, &ds, cfg.k)?,
        seed: cfg.root_seed(),
        split: args.split,
        samples: ds.len(),
        dataset_sha256: ds.content_hash(),
    };
    let path = out.join("metrics.json");
    write_json(&path, &report)?;
    finish("eval", &cfg, &out, &[data, checkpoint], &[path])?;
    say!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let (mut cfg, out) = resolve(&args.common)?;
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(b) = args.beta {
        cfg.beta = b;
    }
    cfg.validate()?;
    let data = data_path(&args.data, &mut cfg)?;
    let checkpoint = checkpoint_path(&args.checkpoint, &mut cfg, &out);
    let ds = select_split(&Dataset::load(&data)?, &cfg, args.split)?;
    let mut model = load_model(&checkpoint, Some(&ds))?;
    model.eval();
    let emb = model.embed(&ds.feature_matrix())?;
    let report = analytics::analyze(&emb, ds.labels(), cfg.alpha, cfg.beta)?;

    let mut outputs = Vec::new();
    let json = out.join("analytics.json");
    write_json(&json, &report)?;
    outputs.push(json);
    let errors = out.join("errors.csv");
    analytics::write_error_csv(&report.estimates, create(&errors)?)?;
    outputs.push(errors);
    let summaries = out.join("distances.csv");
    analytics::write_summary_csv(&report.summaries, create(&summaries)?)?;
    outputs.push(summaries);
    for (kind, group) in analytics::by_kind(&report.summaries) {
        let title = match kind {
            DistanceKind::Intra => "Intra-class distances",
            DistanceKind::Inter => "Inter-class distances",
        };
        let path = out.join(format!("boxplot_{}.svg", kind.as_str()));
        fs::write(&path, analytics::render_boxplots(&group, title)?)?;
        outputs.push(path);
    }
    let embeddings = out.join("embeddings.csv");
    let (_, width) = emb.dims2()?;
    write_table_csv(
        create(&embeddings)?,
        ds.ids(),
        ds.labels(),
        emb.data(),
        width,
        "e",
    )?;
    outputs.push(embeddings);
    finish("analyze", &cfg, &out, &[data, checkpoint], &outputs)?;

    say!("class  type1@alpha  type2@alpha  type1@beta  type2@beta");
    for e in &report.estimates {
        say!(
            "{:>5}  {:>11.4}  {:>11.4}  {:>10.4}  {:>10.4}",
            e.class_label,
            e.at_alpha.type1,
            e.at_alpha.type2,
            e.at_beta.type1,
            e.at_beta.type2
        );
    }
    for s in &report.skipped {
        say!("skipped class {} ({}): {}", s.class_label, s.what, s.reason);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub batch_size: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub runs: usize,
}

/// Mean and sample standard deviation (`n - 1` denominator).
pub fn mean_and_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Times `repeats` eval-mode forward passes per batch size after `warmup`
/// untimed ones.
pub fn bench_model(
    model: &Model,
    sizes: &[usize],
    warmup: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        return Err(Error::Config {
            field: "repeats".into(),
            reason: "must be >= 1".into(),
        });
    }
    let mut model = model.clone();
    model.eval();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.config().input_dim;
    sizes
        .iter()
        .map(|&b| {
            let batch = Tensor::new(
                vec![b, d],
                (0..b * d)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect(),
            )?;
            for _ in 0..warmup {
                model.infer(&batch)?;
            }
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let t = Instant::now();
                std::hint::black_box(model.infer(&batch)?);
                times.push(t.elapsed().as_secs_f64() * 1e3);
            }
            let (mean_ms, std_ms) = mean_and_std(&times);
            Ok(BenchRow {
                batch_size: b,
                mean_ms,
                std_ms,
                runs: repeats,
            })
        })
        .collect()
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let (mut cfg, out) = resolve(&args.common)?;
    let checkpoint = checkpoint_path(&args.checkpoint, &mut cfg, &out);
    let model = load_model(&checkpoint, None)?;
    let rows = bench_model(
        &model,
        &BENCH_BATCH_SIZES,
        args.warmup,
        args.repeats,
        fork_seed(cfg.root_seed(), "bench"),
    )?;
    let json = out.join("bench.json");
    write_json(&json, &rows)?;
    let csv_path = out.join("bench.csv");
    let mut w = csv::Writer::from_writer(create(&csv_path)?);
    for r in &rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    drop(w);
    finish("bench", &cfg, &out, &[checkpoint], &[json, csv_path])?;
    say!("batch  mean_ms  std_ms");
    for r in &rows {
        say!("{:>5}  {:>7.3}  {:>6.3}", r.batch_size, r.mean_ms, r.std_ms);
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Parses the process arguments, runs the command and maps errors to exit
/// codes. Usage errors exit with 2 through clap.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
