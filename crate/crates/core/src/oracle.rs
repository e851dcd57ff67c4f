//! Black-box targets: datasets, the training pipeline that produces a target,
//! and the query-only interface the reconstruction sees.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::align::EvaluationKey;
use crate::error::{shape_err, Error, Result};
use crate::nn::{backward_from_trace, forward, forward_traced, init_glorot, MlpParams, MlpSpec};
use crate::optim::{OptimizerKind, OptimizerState};

/// Target standard deviation of normalized data.
pub const DATA_STD: f64 = 0.5;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Query-only access to a hidden network.
///
/// The parameters can only be read back through [`QueryOracle::unseal`], which
/// needs an [`EvaluationKey`]; only the alignment module can mint one.
#[derive(Debug)]
pub struct QueryOracle {
    hidden: MlpParams,
    queries: AtomicU64,
}

impl QueryOracle {
    pub fn new(hidden: MlpParams) -> Self {
        Self {
            hidden,
            queries: AtomicU64::new(0),
        }
    }

    /// The architecture is public knowledge under the threat model.
    pub fn spec(&self) -> &MlpSpec {
        self.hidden.spec()
    }

    /// Evaluates the hidden network on every row of `inputs`.
    pub fn query(&self, inputs: ArrayView2<f32>) -> Result<Array2<f32>> {
        let out = forward(&self.hidden, inputs)?;
        self.queries
            .fetch_add(inputs.nrows() as u64, Ordering::SeqCst);
        Ok(out)
    }

    /// Number of input rows submitted so far.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    pub fn unseal(&self, _key: &EvaluationKey) -> &MlpParams {
        &self.hidden
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// One mean and one scale over every entry.
    #[default]
    Global,
    PerFeature,
}

/// Affine map `x -> (x - mean) * scale` applied per feature (all entries equal in
/// global mode), expressed relative to the raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mode: NormalizationMode,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f32>,
    pub labels: Option<Vec<usize>>,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(inputs: Array2<f32>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != inputs.nrows() {
                return Err(shape_err(format!(
                    "{} labels for {} inputs",
                    l.len(),
                    inputs.nrows()
                )));
            }
        }
        Ok(Self {
            inputs,
            labels,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// FNV-1a over input bits and labels.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for v in self.inputs.iter() {
            feed(&v.to_bits().to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for &l in labels {
                feed(&(l as u64).to_le_bytes());
            }
        }
        h
    }
}

/// Rescales inputs to mean 0 and standard deviation 0.5.
pub fn normalize(dataset: &Dataset) -> Result<Dataset> {
    normalize_with(dataset, NormalizationMode::Global)
}

pub fn normalize_with(dataset: &Dataset, mode: NormalizationMode) -> Result<Dataset> {
    let (n, dim) = dataset.inputs.dim();
    if n < 2 || dim == 0 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 samples to normalize, got {n}"
        )));
    }
    let columns: Vec<(f64, f64)> = match mode {
        NormalizationMode::Global => {
            let (mean, std) = moments(dataset.inputs.iter().copied());
            vec![(mean, std); dim]
        }
        NormalizationMode::PerFeature => dataset
            .inputs
            .axis_iter(Axis(1))
            .map(|c| moments(c.iter().copied()))
            .collect(),
    };
    if columns.iter().all(|&(_, std)| std <= f64::EPSILON) {
        return Err(Error::DegenerateData("input variance is zero".into()));
    }
    // Constant features in per-feature mode are only centered.
    let step: Vec<(f64, f64)> = columns
        .iter()
        .map(|&(m, s)| (m, if s > f64::EPSILON { DATA_STD / s } else { 1.0 }))
        .collect();
    let mut inputs = dataset.inputs.clone();
    for mut row in inputs.axis_iter_mut(Axis(0)) {
        for (v, &(m, k)) in row.iter_mut().zip(&step) {
            *v = ((*v as f64 - m) * k) as f32;
        }
    }
    // Compose with any earlier normalization so metadata stays raw-relative.
    let normalization = match &dataset.normalization {
        Some(prev) => Normalization {
            mode,
            mean: prev
                .mean
                .iter()
                .zip(&prev.scale)
                .zip(&step)
                .map(|((&m0, &k0), &(m1, _))| m0 + m1 / k0)
                .collect(),
            scale: prev
                .scale
                .iter()
                .zip(&step)
                .map(|(&k0, &(_, k1))| k0 * k1)
                .collect(),
        },
        None => Normalization {
            mode,
            mean: step.iter().map(|s| s.0).collect(),
            scale: step.iter().map(|s| s.1).collect(),
        },
    };
    Ok(Dataset {
        inputs,
        labels: dataset.labels.clone(),
        normalization: Some(normalization),
    })
}

fn moments(values: impl Iterator<Item = f32> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    for v in values.clone() {
        sum += v as f64;
        n += 1;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::MalformedFile {
            offset: offset as u64,
            reason: "truncated header".into(),
        })
}

/// Parses an IDX image file (`0x00000803`) into rows of pixel values in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array2<f32>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::UnsupportedMagic(magic));
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    let needed = count * dim;
    if body.len() < needed {
        return Err(Error::MalformedFile {
            offset: bytes.len() as u64,
            reason: format!("expected {needed} pixel bytes, found {}", body.len()),
        });
    }
    let data = body[..needed].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Array2::from_shape_vec((count, dim), data).expect("sized"))
}

/// Parses an IDX label file (`0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::UnsupportedMagic(magic));
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::MalformedFile {
            offset: bytes.len() as u64,
            reason: format!("expected {count} labels, found {}", body.len()),
        });
    }
    Ok(body[..count].iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image file and, optionally, its label file. Values are in
/// `[0, 1]`; call [`normalize`] afterwards.
pub fn load_idx(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<Dataset> {
    let inputs = parse_idx_images(&fs::read(images)?)?;
    let labels = labels
        .map(|p| {
            fs::read(p)
                .map_err(Error::from)
                .and_then(|b| parse_idx_labels(&b))
        })
        .transpose()?;
    Dataset::new(inputs, labels)
}

/// Gaussian class clusters: `classes` centers drawn from `N(0, 1)` per feature,
/// samples at center + `N(0, 0.5)`, labels assigned uniformly at random.
pub fn synth_dataset(input_dim: usize, classes: usize, n: usize, seed: u64) -> Result<Dataset> {
    if input_dim == 0 || classes == 0 || n == 0 {
        return Err(Error::Config(
            "synthetic dataset needs positive dimension, class count and size".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0f32, 1.0).unwrap();
    let spread = Normal::new(0.0f32, 0.5).unwrap();
    let centers = Array2::from_shape_simple_fn((classes, input_dim), || unit.sample(&mut rng));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let mut inputs = Array2::zeros((n, input_dim));
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..input_dim {
            inputs[[i, j]] = centers[[label, j]] + spread.sample(&mut rng);
        }
    }
    Dataset::new(inputs, Some(labels))
}

/// How a black box is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub lr: Option<f32>,
    pub epochs: usize,
    #[serde(default = "default_train_batch")]
    pub batch_size: usize,
    pub seed: u64,
}

fn default_train_batch() -> usize {
    128
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, epochs: usize, seed: u64) -> Self {
        Self {
            optimizer,
            lr: None,
            epochs,
            batch_size: default_train_batch(),
            seed,
        }
    }
}

/// Softmax cross-entropy, averaged over rows, and its gradient wrt the logits.
pub fn softmax_cross_entropy(logits: ArrayView2<f32>, labels: &[usize]) -> (f64, Array2<f32>) {
    let n = logits.nrows();
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0f64;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[labels[i]] - max) as f64;
        for (j, e) in exps.iter().enumerate() {
            let p = e / z;
            let target = if j == labels[i] { 1.0 } else { 0.0 };
            grad[[i, j]] = ((p - target) / n as f64) as f32;
        }
    }
    (loss / n.max(1) as f64, grad)
}

/// Trains a Glorot-initialized classifier with softmax cross-entropy. Zero epochs
/// returns the initialization unchanged.
pub fn train_network(spec: &MlpSpec, dataset: &Dataset, config: &TrainConfig) -> Result<MlpParams> {
    if dataset.input_dim() != spec.input_dim() {
        return Err(shape_err(format!(
            "dataset has {} features, network expects {}",
            dataset.input_dim(),
            spec.input_dim()
        )));
    }
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("black-box training needs labels".into()))?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= spec.output_dim()) {
        return Err(Error::Config(format!(
            "label {bad} out of range for {} outputs",
            spec.output_dim()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut params = init_glorot(spec, config.seed);
    if config.epochs == 0 || dataset.is_empty() {
        return Ok(params);
    }
    let mut opt = OptimizerState::with_lr(
        config.optimizer,
        config.lr.unwrap_or_else(|| config.optimizer.default_lr()),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_b1ac_b0c5);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let x = dataset.inputs.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let trace = forward_traced(&params, x.view())?;
            let (_, up) = softmax_cross_entropy(trace.output().view(), &y);
            let grads = backward_from_trace(&params, x.view(), &trace, up.view())?;
            opt.step(&mut params, &grads)?;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("black-box training".into()));
        }
    }
    Ok(params)
}

/// Trains a black box and hides it behind a [`QueryOracle`].
pub fn train_blackbox(
    spec: &MlpSpec,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<QueryOracle> {
    Ok(QueryOracle::new(train_network(spec, dataset, config)?))
}

/// Fraction of rows whose argmax output equals the label.
pub fn accuracy(params: &MlpParams, dataset: &Dataset) -> Result<f64> {
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("accuracy needs labels".into()))?;
    let out = forward(params, dataset.inputs.view())?;
    let hits = out
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &l)| argmax(row.iter().copied()) == l)
        .count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

pub(crate) fn argmax(values: impl Iterator<Item = f32>) -> usize {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// First `n` rows (all rows if fewer).
pub fn head(dataset: &Dataset, n: usize) -> Dataset {
    let n = n.min(dataset.len());
    Dataset {
        inputs: dataset.inputs.slice(s![..n, ..]).to_owned(),
        labels: dataset.labels.as_ref().map(|l| l[..n].to_vec()),
        normalization: dataset.normalization.clone(),
    }
}

/// Column means of a matrix, used by tests and reports.
pub fn column_means(m: &Array2<f32>) -> Array1<f64> {
    m.mapv(|v| v as f64).mean_axis(Axis(0)).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::array;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn query_counts_rows() {
        let spec = MlpSpec::new(vec![3, 2], Activation::default()).unwrap();
        let oracle = QueryOracle::new(init_glorot(&spec, 0));
        let x = array![[1.0f32, 2.0, 3.0]];
        let a = oracle.query(x.view()).unwrap();
        let b = oracle.query(x.view()).unwrap();
        assert_eq!(a, b);
        assert_eq!(oracle.query_count(), 2);
        let empty = Array2::<f32>::zeros((0, 3));
        assert_eq!(oracle.query(empty.view()).unwrap().nrows(), 0);
        assert_eq!(oracle.query_count(), 2);
        assert!(oracle.query(Array2::zeros((1, 4)).view()).is_err());
        assert_eq!(oracle.query_count(), 2);
    }

    #[test]
    fn query_count_accumulates_large_budgets() {
        let spec = MlpSpec::new(vec![2, 2], Activation::default()).unwrap();
        let oracle = QueryOracle::new(init_glorot(&spec, 0));
        let batch = Array2::<f32>::zeros((55_000, 2));
        for _ in 0..10 {
            oracle.query(batch.view()).unwrap();
        }
        assert_eq!(oracle.query_count(), 550_000);
    }

    #[test]
    fn normalize_pair() {
        let d = Dataset::new(array![[-1.0f32], [1.0]], None).unwrap();
        let n = normalize(&d).unwrap();
        assert_eq!(n.inputs, array![[-0.5f32], [0.5]]);
    }

    #[test]
    fn normalize_constant_is_degenerate() {
        let d = Dataset::new(Array2::from_elem((4, 3), 2.0f32), None).unwrap();
        assert!(matches!(normalize(&d), Err(Error::DegenerateData(_))));
        let single = Dataset::new(array![[1.0f32, 2.0]], None).unwrap();
        assert!(matches!(normalize(&single), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn normalize_is_idempotent() {
        let d = synth_dataset(6, 3, 500, 4).unwrap();
        let once = normalize(&d).unwrap();
        let twice = normalize(&once).unwrap();
        for (a, b) in once.inputs.iter().zip(twice.inputs.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        let (mean, std) = moments(once.inputs.iter().copied());
        assert!(mean.abs() < 1e-2 && (std - 0.5).abs() < 1e-2);
        // Composed metadata maps raw data straight to the twice-normalized data.
        let meta = twice.normalization.unwrap();
        let raw = d.inputs[[3, 2]] as f64;
        let mapped = (raw - meta.mean[2]) * meta.scale[2];
        assert!((mapped - twice.inputs[[3, 2]] as f64).abs() < 1e-5);
    }

    #[test]
    fn per_feature_normalization() {
        let d = synth_dataset(4, 2, 400, 9).unwrap();
        let n = normalize_with(&d, NormalizationMode::PerFeature).unwrap();
        for col in n.inputs.axis_iter(Axis(1)) {
            let (m, s) = moments(col.iter().copied());
            assert!(m.abs() < 1e-5 && (s - 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn idx_two_by_two() {
        let bytes = idx_images(2, 2, 2, &[0, 255, 51, 102, 255, 0, 0, 0]);
        let m = parse_idx_images(&bytes).unwrap();
        assert_eq!(m.dim(), (2, 4));
        assert_eq!(m[[0, 1]], 1.0);
        assert!((m[[0, 2]] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn idx_errors() {
        let bytes = idx_images(2, 2, 2, &[0, 1, 2]);
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(Error::MalformedFile { .. })
        ));
        assert!(matches!(
            parse_idx_images(&bytes[..6]),
            Err(Error::MalformedFile { offset: 4, .. })
        ));
        let mut wrong = bytes.clone();
        wrong[3] = 0x01;
        assert!(matches!(
            parse_idx_images(&wrong),
            Err(Error::UnsupportedMagic(0x0000_0801))
        ));
        let mut labels = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        labels.extend(3u32.to_be_bytes());
        labels.extend([1, 7, 9]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![1, 7, 9]);
        assert!(parse_idx_labels(&labels[..10]).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        assert_eq!(
            synth_dataset(5, 3, 50, 1).unwrap(),
            synth_dataset(5, 3, 50, 1).unwrap()
        );
        assert_ne!(
            synth_dataset(5, 3, 50, 1).unwrap(),
            synth_dataset(5, 3, 50, 2).unwrap()
        );
    }

    #[test]
    fn zero_epochs_returns_init() {
        let spec = MlpSpec::new(vec![4, 5, 3], Activation::default()).unwrap();
        let d = normalize(&synth_dataset(4, 3, 64, 0).unwrap()).unwrap();
        let p = train_network(&spec, &d, &TrainConfig::new(OptimizerKind::Adam, 0, 17)).unwrap();
        assert_eq!(p, init_glorot(&spec, 17));
    }

    #[test]
    fn training_learns_and_is_deterministic() {
        let spec = MlpSpec::new(vec![6, 8, 3], Activation::default()).unwrap();
        let d = normalize(&synth_dataset(6, 3, 600, 2).unwrap()).unwrap();
        let cfg = TrainConfig {
            lr: Some(1e-2),
            ..TrainConfig::new(OptimizerKind::Adam, 20, 3)
        };
        let a = train_network(&spec, &d, &cfg).unwrap();
        let b = train_network(&spec, &d, &cfg).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let before = accuracy(&init_glorot(&spec, 3), &d).unwrap();
        let after = accuracy(&a, &d).unwrap();
        assert!(after > 0.9 && after > before, "{before} -> {after}");
    }

    #[test]
    fn softmax_ce_gradient_rows_sum_to_zero() {
        let logits = array![[1.0f32, 2.0, 0.5], [0.0, 0.0, 0.0]];
        let (loss, g) = softmax_cross_entropy(logits.view(), &[1, 2]);
        assert!(loss > 0.0);
        for row in g.axis_iter(Axis(0)) {
            assert!(row.sum().abs() < 1e-6);
        }
        assert!(((3.0f64).ln() / 2.0 + 0.0) < loss);
    }
}
