//! Synthetic multimodal datasets with controllable per-modality signal and
//! missing rates, their on-disk CSV layout, and mini-batch iteration.
//!
//! Each sample draws a label, then a shared latent vector around that
//! label's class mean. Modality `m` sees a fixed random linear readout of the
//! latent plus Gaussian noise whose variance is `(1 - s) / s` for
//! informativeness `s`. Absent features are stored as zeros.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

const CLASS_SEPARATION: f64 = 2.0;
const WITHIN_CLASS_STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_samples: usize,
    pub n_classes: usize,
    pub latent_dim: usize,
    pub modality_dims: Vec<usize>,
    pub informativeness: Vec<f64>,
    pub missing_rates: Vec<f64>,
    pub seed: u64,
}

impl Default for GenConfig {
    /// 2000 samples, 4 classes, three 16-dimensional modalities with
    /// missing rates 0.8, 0.2 and 0.5.
    fn default() -> Self {
        GenConfig {
            n_samples: 2000,
            n_classes: 4,
            latent_dim: 8,
            modality_dims: vec![16; 3],
            informativeness: vec![0.5; 3],
            missing_rates: vec![0.8, 0.2, 0.5],
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.modality_dims.len();
        if m == 0 {
            return Err(Error::config("at least one modality is required"));
        }
        if self.n_samples == 0 || self.n_classes < 2 || self.latent_dim == 0 {
            return Err(Error::config(
                "n_samples and latent_dim must be positive and n_classes at least 2",
            ));
        }
        if self.informativeness.len() != m || self.missing_rates.len() != m {
            return Err(Error::config(format!(
                "{m} modalities but {} informativeness values and {} missing rates",
                self.informativeness.len(),
                self.missing_rates.len()
            )));
        }
        if self.modality_dims.iter().any(|&d| d == 0) {
            return Err(Error::config("modality dimensions must be positive"));
        }
        if let Some(s) = self
            .informativeness
            .iter()
            .find(|&&s| !(s > 0.0 && s <= 1.0))
        {
            return Err(Error::config(format!("informativeness {s} not in (0, 1]")));
        }
        check_rates(&self.missing_rates)
    }
}

fn check_rates(rates: &[f64]) -> Result<()> {
    match rates.iter().find(|&&r| !(0.0..1.0).contains(&r)) {
        Some(r) => Err(Error::config(format!("missing rate {r} not in [0, 1)"))),
        None => Ok(()),
    }
}

/// The `N x M` modality presence matrix. `get(n, m)` is true when modality
/// `m` of sample `n` is available.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Presence {
    n_modalities: usize,
    cells: Vec<bool>,
}

impl Presence {
    pub fn new(n_modalities: usize, cells: Vec<bool>) -> Result<Self> {
        if n_modalities == 0 || cells.len() % n_modalities != 0 {
            return Err(Error::shape(format!(
                "{} presence cells do not split into rows of {n_modalities}",
                cells.len()
            )));
        }
        Ok(Presence {
            n_modalities,
            cells,
        })
    }

    pub fn all_present(n: usize, n_modalities: usize) -> Self {
        Presence {
            n_modalities,
            cells: vec![true; n * n_modalities],
        }
    }

    /// Every sample has exactly the modalities in `subset`.
    pub fn only(n: usize, n_modalities: usize, subset: &[usize]) -> Self {
        let mut row = vec![false; n_modalities];
        for &m in subset {
            row[m] = true;
        }
        Presence {
            n_modalities,
            cells: row.repeat(n),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.cells.len() / self.n_modalities
    }

    pub fn n_modalities(&self) -> usize {
        self.n_modalities
    }

    pub fn get(&self, n: usize, m: usize) -> bool {
        self.cells[n * self.n_modalities + m]
    }

    pub fn row(&self, n: usize) -> &[bool] {
        &self.cells[n * self.n_modalities..(n + 1) * self.n_modalities]
    }

    pub fn column(&self, m: usize) -> Vec<bool> {
        (0..self.n_samples()).map(|n| self.get(n, m)).collect()
    }

    pub fn count(&self, m: usize) -> usize {
        (0..self.n_samples()).filter(|&n| self.get(n, m)).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Presence {
        let mut cells = Vec::with_capacity(idx.len() * self.n_modalities);
        for &n in idx {
            cells.extend_from_slice(self.row(n));
        }
        Presence {
            n_modalities: self.n_modalities,
            cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalDataset {
    /// One `[N, d_m]` matrix per modality.
    pub features: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub presence: Presence,
    pub declared_rates: Vec<f64>,
    pub n_classes: usize,
    pub seed: u64,
}

impl MultimodalDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_modalities(&self) -> usize {
        self.features.len()
    }

    pub fn modality_dims(&self) -> Vec<usize> {
        self.features.iter().map(Tensor::cols).collect()
    }

    /// The samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> MultimodalDataset {
        MultimodalDataset {
            features: self.features.iter().map(|f| f.select_rows(idx)).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            presence: self.presence.select_rows(idx),
            declared_rates: self.declared_rates.clone(),
            n_classes: self.n_classes,
            seed: self.seed,
        }
    }

    /// Deterministic shuffled split into `(train, test)` with
    /// `round(test_fraction * N)` test samples.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config(format!(
                "test fraction {test_fraction} not in [0, 1)"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::derived(seed, Stream::Split, 0));
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let m = self.features.len();
        if m == 0 || self.presence.n_modalities() != m || self.declared_rates.len() != m {
            return Err(Error::config("modality count mismatch inside dataset"));
        }
        if self.features.iter().any(|f| f.rows() != n) || self.presence.n_samples() != n {
            return Err(Error::config("sample count mismatch inside dataset"));
        }
        if let Some(&label) = self.labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::Label {
                label,
                classes: self.n_classes,
            });
        }
        if let Some(row) = (0..n).find(|&i| !self.presence.row(i).iter().any(|&p| p)) {
            return Err(Error::config(format!("sample {row} has no modality present")));
        }
        Ok(())
    }
}

/// Mask-sampling probabilities `q_m` such that, after rejecting all-missing
/// rows, the marginal missing rate of modality `m` is exactly `rates[m]`.
///
/// Solves `q_m = r_m (1 - P) + P` with `P = prod q_m` by fixed-point
/// iteration from `P = prod r_m`. That needs `sum (1 - r_m) > 1`; otherwise
/// no row-i.i.d. mask without empty rows can hit the rates and the raw rates
/// are returned.
pub fn calibrated_missing_probs(rates: &[f64]) -> Vec<f64> {
    let expected_present: f64 = rates.iter().map(|r| 1.0 - r).sum();
    if expected_present <= 1.0 + 1e-9 {
        log::warn!("missing rates {rates:?} leave under one modality per sample on average; realized rates will be lower");
        return rates.to_vec();
    }
    let q_of = |p: f64| -> Vec<f64> { rates.iter().map(|&r| r * (1.0 - p) + p).collect() };
    let mut p: f64 = rates.iter().product();
    for _ in 0..10_000 {
        let next: f64 = q_of(p).iter().product();
        if (next - p).abs() < 1e-15 {
            p = next;
            break;
        }
        p = next;
    }
    q_of(p)
}

/// Samples an `n x M` presence matrix with i.i.d. rows. Rows with no
/// modality present are redrawn.
pub fn sample_mask(rates: &[f64], n: usize, seed: u64) -> Result<Presence> {
    if rates.is_empty() {
        return Err(Error::config("at least one modality is required"));
    }
    check_rates(rates)?;
    let probs = calibrated_missing_probs(rates);
    let mut rng = rng::derived(seed, Stream::Mask, 0);
    let mut cells = Vec::with_capacity(n * rates.len());
    let mut row = vec![false; rates.len()];
    for _ in 0..n {
        loop {
            for (cell, &q) in row.iter_mut().zip(&probs) {
                *cell = rng.random::<f64>() >= q;
            }
            if row.iter().any(|&p| p) {
                break;
            }
        }
        cells.extend_from_slice(&row);
    }
    Presence::new(rates.len(), cells)
}

/// `(N - sum_n C_nm) / N`.
pub fn missing_rate(presence: &Presence, m: usize) -> Result<f64> {
    if m >= presence.n_modalities() {
        return Err(Error::config(format!(
            "modality index {m} out of range for {} modalities",
            presence.n_modalities()
        )));
    }
    let n = presence.n_samples();
    let present = presence.count(m);
    if present == 0 {
        return Err(Error::DegenerateModality(m));
    }
    Ok((n - present) as f64 / n as f64)
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn class_means(cfg: &GenConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let dim = cfg.latent_dim;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes);
    for c in 0..cfg.n_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        // Gram-Schmidt while there is room, so classes are equidistant.
        if c < dim {
            for prev in &means {
                let proj: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>()
                    / (CLASS_SEPARATION * CLASS_SEPARATION);
                for (a, b) in v.iter_mut().zip(prev) {
                    *a -= proj * b;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        means.push(v.into_iter().map(|a| CLASS_SEPARATION * a / norm).collect());
    }
    means
}

pub fn gen_dataset(cfg: &GenConfig) -> Result<MultimodalDataset> {
    cfg.validate()?;
    let mut rng = rng::derived(cfg.seed, Stream::Generator, 0);
    let means = class_means(cfg, &mut rng);
    let readouts: Vec<Vec<f64>> = cfg
        .modality_dims
        .iter()
        .map(|&d| {
            let scale = (1.0 / cfg.latent_dim as f64).sqrt();
            (0..d * cfg.latent_dim)
                .map(|_| scale * gaussian(&mut rng))
                .collect()
        })
        .collect();
    let noise_std: Vec<f64> = cfg
        .informativeness
        .iter()
        .map(|&s| ((1.0 - s) / s).sqrt())
        .collect();

    let presence = sample_mask(&cfg.missing_rates, cfg.n_samples, cfg.seed)?;
    let mut labels = Vec::with_capacity(cfg.n_samples);
    let mut feats: Vec<Vec<f64>> = cfg
        .modality_dims
        .iter()
        .map(|&d| Vec::with_capacity(cfg.n_samples * d))
        .collect();
    let mut latent = vec![0.0; cfg.latent_dim];
    for n in 0..cfg.n_samples {
        let y = rng.random_range(0..cfg.n_classes);
        labels.push(y);
        for (u, mu) in latent.iter_mut().zip(&means[y]) {
            *u = mu + WITHIN_CLASS_STD * gaussian(&mut rng);
        }
        for (m, &d) in cfg.modality_dims.iter().enumerate() {
            let present = presence.get(n, m);
            for i in 0..d {
                let row = &readouts[m][i * cfg.latent_dim..(i + 1) * cfg.latent_dim];
                let signal: f64 = row.iter().zip(&latent).map(|(a, u)| a * u).sum();
                let v = signal + noise_std[m] * gaussian(&mut rng);
                feats[m].push(if present { v } else { 0.0 });
            }
        }
    }
    let features = feats
        .into_iter()
        .zip(&cfg.modality_dims)
        .map(|(data, &d)| Tensor::new(vec![cfg.n_samples, d], data))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultimodalDataset {
        features,
        labels,
        presence,
        declared_rates: cfg.missing_rates.clone(),
        n_classes: cfg.n_classes,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    n_samples: usize,
    n_classes: usize,
    modality_dims: Vec<usize>,
    declared_rates: Vec<f64>,
    seed: u64,
}

pub fn modality_file(m: usize) -> String {
    format!("modality_{}.csv", m + 1)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn save_csv(ds: &MultimodalDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        n_samples: ds.len(),
        n_classes: ds.n_classes,
        modality_dims: ds.modality_dims(),
        declared_rates: ds.declared_rates.clone(),
        seed: ds.seed,
    };
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_file(&dir.join("meta.json"), &(meta_json + "\n"))?;

    for (m, f) in ds.features.iter().enumerate() {
        let mut body = String::with_capacity(f.len() * 20);
        for r in 0..f.rows() {
            for (j, v) in f.row(r).iter().enumerate() {
                if j > 0 {
                    body.push(',');
                }
                // `{:?}` is the shortest representation that parses back exactly.
                write!(body, "{v:?}").unwrap();
            }
            body.push('\n');
        }
        write_file(&dir.join(modality_file(m)), &body)?;
    }

    let mut labels = String::new();
    for y in &ds.labels {
        writeln!(labels, "{y}").unwrap();
    }
    write_file(&dir.join("labels.csv"), &labels)?;

    let mut presence = String::new();
    for n in 0..ds.len() {
        let row: Vec<&str> = ds
            .presence
            .row(n)
            .iter()
            .map(|&p| if p { "1" } else { "0" })
            .collect();
        presence.push_str(&row.join(","));
        presence.push('\n');
    }
    write_file(&dir.join("presence.csv"), &presence)
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| parse_err(path, 0, format!("cannot read: {e}")))
}

/// Parses `expected_rows` lines of exactly `cols` comma-separated fields.
fn parse_table<T>(
    path: &Path,
    expected_rows: usize,
    cols: usize,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let body = read_file(path)?;
    let mut out = Vec::with_capacity(expected_rows * cols);
    let mut rows = 0;
    for (i, line) in body.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {cols} fields, found {}", fields.len()),
            ));
        }
        for f in fields {
            out.push(parse(f.trim()).map_err(|msg| parse_err(path, lineno, msg))?);
        }
        rows += 1;
    }
    if rows != expected_rows {
        return Err(parse_err(
            path,
            rows,
            format!("expected {expected_rows} rows, found {rows}"),
        ));
    }
    Ok(out)
}

pub fn load_csv(dir: &Path) -> Result<MultimodalDataset> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read_file(&meta_path)?)
        .map_err(|e| parse_err(&meta_path, e.line(), e.to_string()))?;
    let m = meta.modality_dims.len();
    if m == 0 || meta.declared_rates.len() != m {
        return Err(parse_err(&meta_path, 0, "modality_dims and declared_rates disagree"));
    }
    let n = meta.n_samples;

    let mut features = Vec::with_capacity(m);
    for (k, &d) in meta.modality_dims.iter().enumerate() {
        let path: PathBuf = dir.join(modality_file(k));
        let data = parse_table(&path, n, d, |s| {
            let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite value {s:?}"))
            }
        })?;
        features.push(Tensor::new(vec![n, d], data)?);
    }

    let labels_path = dir.join("labels.csv");
    let labels = parse_table(&labels_path, n, 1, |s| {
        let y: usize = s.parse().map_err(|_| format!("not a label: {s:?}"))?;
        if y < meta.n_classes {
            Ok(y)
        } else {
            Err(format!("label {y} out of range for {} classes", meta.n_classes))
        }
    })?;

    let presence_path = dir.join("presence.csv");
    let cells = parse_table(&presence_path, n, m, |s| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("presence entry must be 0 or 1, found {other:?}")),
    })?;
    let presence = Presence::new(m, cells)?;
    if let Some(row) = (0..n).find(|&i| !presence.row(i).iter().any(|&p| p)) {
        return Err(parse_err(&presence_path, row + 1, "sample has no modality present"));
    }

    let ds = MultimodalDataset {
        features,
        labels,
        presence,
        declared_rates: meta.declared_rates,
        n_classes: meta.n_classes,
        seed: meta.seed,
    };
    ds.validate()?;
    Ok(ds)
}

/// One mini-batch, sliced out of a dataset.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub presence: Presence,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_indices(ds: &MultimodalDataset, indices: Vec<usize>) -> Batch {
        Batch {
            features: ds.features.iter().map(|f| f.select_rows(&indices)).collect(),
            labels: indices.iter().map(|&i| ds.labels[i]).collect(),
            presence: ds.presence.select_rows(&indices),
            indices,
        }
    }

    /// The whole dataset as one batch.
    pub fn full(ds: &MultimodalDataset) -> Batch {
        Batch::from_indices(ds, (0..ds.len()).collect())
    }
}

/// Sample order for one pass over `n` samples.
pub fn epoch_order(n: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        idx.shuffle(&mut rng::derived(seed, Stream::Shuffle, epoch));
    }
    idx
}

/// One epoch of batches; the last batch may be short.
pub fn batches(
    ds: &MultimodalDataset,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> impl Iterator<Item = Batch> + '_ {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let order = epoch_order(ds.len(), seed, 0, shuffle);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |idx| Batch::from_indices(ds, idx))
}

/// An endless stream of batches over successive reshuffled epochs.
///
/// The position is fully described by `(epoch, offset)`, which is what a
/// checkpoint stores.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
    epoch: u64,
    offset: usize,
    order: Vec<usize>,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64, shuffle: bool) -> Self {
        BatchStream::at(n, batch_size, seed, shuffle, 0, 0)
    }

    pub fn at(n: usize, batch_size: usize, seed: u64, shuffle: bool, epoch: u64, offset: usize) -> Self {
        assert!(batch_size >= 1 && n >= 1);
        BatchStream {
            n,
            batch_size,
            seed,
            shuffle,
            epoch,
            offset,
            order: epoch_order(n, seed, epoch, shuffle),
        }
    }

    pub fn position(&self) -> (u64, usize) {
        (self.epoch, self.offset)
    }

    /// Number of samples per epoch.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.offset >= self.n {
            self.epoch += 1;
            self.offset = 0;
            self.order = epoch_order(self.n, self.seed, self.epoch, self.shuffle);
        }
        let end = (self.offset + self.batch_size).min(self.n);
        let idx = self.order[self.offset..end].to_vec();
        self.offset = end;
        idx
    }
}
