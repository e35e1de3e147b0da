//! Datasets: CSV and packed binary I/O, deterministic splitting, and a
//! Gaussian-cluster generator with outliers.
//!
//! CSV layout: header `id,label,f0,..,f{D-1}`, one sample per row, labels
//! integers `>= -1`, features finite decimals.
//!
//! Binary layout (`QND1`, all little-endian): magic `b"QND1"`, version `u32`,
//! `N: u64`, `D: u64`, `C: i64`, then `labels: i64[N]` and
//! `features: f64[N*D]` row-major. Ids are not stored; loading assigns the
//! row index as id.

mod synth;

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use synth::{
    generate_synthetic, generate_with_centers, OutlierLaw, SynthConfig, OUTLIER_EXCLUSION_SIGMAS,
};

const BINARY_MAGIC: &[u8; 4] = b"QND1";
const BINARY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<i64>,
    num_classes: usize,
    ids: Vec<String>,
}

impl Dataset {
    /// `C` is inferred as one more than the largest non-outlier label.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<i64>, ids: Vec<String>) -> Result<Self> {
        let num_classes = labels
            .iter()
            .copied()
            .filter(|&l| l >= 0)
            .max()
            .map_or(0, |m| m as usize + 1);
        Dataset::with_classes(features, dim, labels, ids, num_classes)
    }

    pub fn with_classes(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<i64>,
        ids: Vec<String>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if ids.len() != n || features.len() != n * dim {
            return Err(Error::dim(
                "dataset",
                &[n, dim],
                &[ids.len(), features.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l < -1 || l >= num_classes as i64) {
            return Err(Error::Index {
                context: "dataset label",
                index: bad,
                limit: num_classes as i64,
            });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(Dataset {
            features,
            dim,
            labels,
            num_classes,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Feature rows at `indices` as a `len × D` matrix.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![indices.len(), self.dim], data).expect("consistent shape")
    }

    pub fn feature_matrix(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.dim], self.features.clone()).expect("consistent shape")
    }

    /// Rows at `indices`, keeping `C` of the parent.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.batch(indices).into_data(),
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// SHA-256 of the packed binary encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_binary(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_table_csv(w, &self.ids, &self.labels, &self.features, self.dim, "f")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(r);
        let header = reader.headers().map_err(|e| parse_error(1, e))?.clone();
        if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
            return Err(Error::Parse {
                line: 1,
                reason: "header must start with `id,label,f0`".into(),
            });
        }
        for (k, name) in header.iter().skip(2).enumerate() {
            if name != format!("f{k}") {
                return Err(Error::Parse {
                    line: 1,
                    reason: format!("column {} must be named f{k}, found `{name}`", k + 2),
                });
            }
        }
        let dim = header.len() - 2;
        let (mut features, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
        for rec in reader.records() {
            let rec = rec.map_err(|e| parse_error(e.position().map_or(0, |p| p.line()), e))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    line,
                    reason: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            let label: i64 = rec[1].trim().parse().map_err(|e| parse_error(line, e))?;
            if label < -1 {
                return Err(Error::Parse {
                    line,
                    reason: format!("label {label} is below -1"),
                });
            }
            for field in rec.iter().skip(2) {
                let v: f64 = field.trim().parse().map_err(|e| parse_error(line, e))?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        reason: format!("non-finite feature `{field}`"),
                    });
                }
                features.push(v);
            }
            ids.push(rec[0].to_string());
            labels.push(label);
        }
        Dataset::new(features, dim, labels, ids)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.num_classes as i64).to_le_bytes())?;
        for &l in &self.labels {
            w.write_all(&l.to_le_bytes())?;
        }
        for &x in &self.features {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word4 = [0u8; 4];
        let mut word8 = [0u8; 8];
        r.read_exact(&mut word4)?;
        if &word4 != BINARY_MAGIC {
            return Err(Error::Format(format!("bad dataset magic {word4:?}")));
        }
        r.read_exact(&mut word4)?;
        let version = u32::from_le_bytes(word4);
        if version != BINARY_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word8)?;
            Ok(word8)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let c = i64::from_le_bytes(next(&mut r)?);
        if c < 0 {
            return Err(Error::Format(format!("negative class count {c}")));
        }
        let labels = (0..n)
            .map(|_| next(&mut r).map(i64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let features = (0..n * dim)
            .map(|_| next(&mut r).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let ids = (0..n).map(|i| i.to_string()).collect();
        Dataset::with_classes(features, dim, labels, ids, c as usize)
    }

    /// Loads CSV, or `QND1` binary when the path ends in `.bin`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        if is_binary_path(path) {
            Dataset::read_binary(file)
        } else {
            Dataset::read_csv(file)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        if is_binary_path(path) {
            self.write_binary(&mut file)?;
        } else {
            self.write_csv(&mut file)?;
        }
        file.flush()?;
        Ok(())
    }
}

fn is_binary_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn parse_error(line: u64, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        reason: e.to_string(),
    }
}

/// Writes `id,label,<prefix>0,..` rows.
pub fn write_table_csv<W: Write>(
    w: W,
    ids: &[String],
    labels: &[i64],
    values: &[f64],
    width: usize,
    prefix: &str,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..width).map(|k| format!("{prefix}{k}")));
    out.write_record(&header).map_err(csv_io)?;
    for (i, (id, label)) in ids.iter().zip(labels).enumerate() {
        let mut row = vec![id.clone(), label.to_string()];
        row.extend(
            values[i * width..(i + 1) * width]
                .iter()
                .map(|v| v.to_string()),
        );
        out.write_record(&row).map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Split fractions for train, validation and test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        if [train, val, test].iter().any(|&x| !(x > 0.0)) || (train + val + test - 1.0).abs() > 1e-9
        {
            return Err(Error::Split(format!(
                "ratios must be positive and sum to 1, got ({train}, {val}, {test})"
            )));
        }
        Ok(r)
    }

    fn sizes(&self, n: usize) -> (usize, usize) {
        let n_train = ((self.train * n as f64).round() as usize).min(n);
        let n_val = ((self.val * n as f64).round() as usize).min(n - n_train);
        (n_train, n_val)
    }
}

/// Disjoint train/validation/test cover of `ds`, deterministic under `seed`.
/// Stratified mode splits every label separately and needs at least three
/// samples per label.
pub fn split(
    ds: &Dataset,
    ratios: SplitRatios,
    seed: u64,
    stratified: bool,
) -> Result<(Dataset, Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut assign = |mut idx: Vec<usize>, rng: &mut ChaCha8Rng| {
        idx.shuffle(rng);
        let (a, b) = ratios.sizes(idx.len());
        parts[0].extend(&idx[..a]);
        parts[1].extend(&idx[a..a + b]);
        parts[2].extend(&idx[a + b..]);
    };
    if stratified {
        let mut labels: Vec<i64> = ds.labels().to_vec();
        labels.sort_unstable();
        labels.dedup();
        for l in labels {
            let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == l).collect();
            if members.len() < 3 {
                return Err(Error::Split(format!(
                    "label {l} has {} samples; stratified splitting needs at least 3",
                    members.len()
                )));
            }
            assign(members, &mut rng);
        }
    } else {
        assign((0..ds.len()).collect(), &mut rng);
    }
    let [train, val, test] = parts.map(|mut p| {
        p.sort_unstable();
        ds.subset(&p)
    });
    Ok((train, val, test))
}
