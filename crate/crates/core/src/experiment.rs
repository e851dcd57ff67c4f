//! End-to-end experiment steps that read configs and write artifacts: black-box
//! training, reconstruction, alignment reports, sweeps and query dumps.
//!
//! Every artifact is a pair `<stem>.nrm1` (weights) plus `<stem>.json`
//! (metadata or report), and every JSON artifact embeds the resolved config.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::align::{align_and_compare, evaluate_against_oracle, AlignmentReport};
use crate::config::{DataSource, ExperimentConfig, InitSection, SweepConfig};
use crate::error::{Error, Result};
use crate::nn::{init_glorot, MlpParams};
use crate::optim::OptimizerKind;
use crate::oracle::{
    accuracy, load_idx, normalize_with, synth_dataset, train_network, Dataset, Normalization,
    QueryOracle,
};
use crate::persist::{load_nrm1, save_nrm1};
use crate::reconstruct::{
    init_population, reconstruct_with_retries, sample_batch, ConvergenceKind, PopulationInit,
    QueryDataset, RetryReport, SamplePools, SamplerConfig, SamplerKind,
};
use crate::sampling::{sample_gaussian, QueryBatch};

/// `<stem>.<ext>` without touching any dots already in the stem.
pub fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Normalized training data plus the optional expanded pool.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub dataset: Dataset,
    pub expanded: Option<Array2<f32>>,
}

pub fn load_training_data(cfg: &ExperimentConfig) -> Result<TrainingData> {
    let dim = cfg.spec.input_dim();
    let classes = cfg.spec.output_dim();
    let mode = cfg.oracle.normalization;
    let (raw, extra) = match &cfg.oracle.data {
        DataSource::Synth {
            samples,
            seed,
            expanded_samples,
        } => {
            let raw = synth_dataset(dim, classes, *samples, *seed)?;
            let extra = if *expanded_samples > 0 {
                // A sibling distribution: same recipe, different cluster centers.
                vec![synth_dataset(
                    dim,
                    classes,
                    *expanded_samples,
                    seed ^ 0xe7a4_d3d0,
                )?]
            } else {
                Vec::new()
            };
            (raw, extra)
        }
        DataSource::Idx {
            images,
            labels,
            expanded,
        } => {
            let raw = load_idx(images, labels.as_deref())?;
            let extra = expanded
                .iter()
                .map(|p| load_idx(p, None))
                .collect::<Result<Vec<_>>>()?;
            (raw, extra)
        }
    };
    if raw.input_dim() != dim {
        return Err(Error::SpecMismatch(format!(
            "dataset has {} features, spec expects {dim}",
            raw.input_dim()
        )));
    }
    let dataset = normalize_with(&raw, mode)?;
    let expanded = if extra.is_empty() {
        None
    } else {
        let parts = extra
            .iter()
            .map(|d| normalize_with(d, mode).map(|n| n.inputs))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Some(
            concatenate(Axis(0), &views)
                .map_err(|_| Error::SpecMismatch("expanded files differ in width".into()))?,
        )
    };
    Ok(TrainingData { dataset, expanded })
}

/// Metadata written next to a trained black box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackboxMetadata {
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub lr: f32,
    pub epochs: usize,
    pub dataset_rows: usize,
    pub dataset_checksum: u64,
    pub normalization: Option<Normalization>,
    pub train_accuracy: Option<f64>,
    pub weights_checksum: u64,
    pub config: ExperimentConfig,
}

/// Trains the black box described by `cfg` without writing anything.
pub fn train_blackbox_params(cfg: &ExperimentConfig) -> Result<(MlpParams, BlackboxMetadata)> {
    let data = load_training_data(cfg)?;
    let t = &cfg.oracle.training;
    let params = train_network(&cfg.spec, &data.dataset, t)?;
    let meta = BlackboxMetadata {
        seed: t.seed,
        optimizer: t.optimizer,
        lr: t.lr.unwrap_or_else(|| t.optimizer.default_lr()),
        epochs: t.epochs,
        dataset_rows: data.dataset.len(),
        dataset_checksum: data.dataset.checksum(),
        normalization: data.dataset.normalization.clone(),
        train_accuracy: data
            .dataset
            .labels
            .as_ref()
            .map(|_| accuracy(&params, &data.dataset))
            .transpose()?,
        weights_checksum: params.checksum(),
        config: cfg.clone(),
    };
    Ok((params, meta))
}

/// Writes `<stem>.nrm1` and `<stem>.json`.
pub fn cmd_train_blackbox(cfg: &ExperimentConfig, stem: &Path) -> Result<BlackboxMetadata> {
    let (params, meta) = train_blackbox_params(cfg)?;
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_nrm1(&params, with_ext(stem, "nrm1"))?;
    write_json(&meta, &with_ext(stem, "json"))?;
    Ok(meta)
}

/// Everything produced by one reconstruction command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub status: ConvergenceKind,
    pub retries: RetryReport,
    /// Sum of per-attempt query counts.
    pub total_queries: u64,
    /// Queries recorded by the oracle itself.
    pub oracle_queries: u64,
    pub evaluation: Option<AlignmentReport>,
    pub evaluation_error: Option<String>,
}

impl ReconstructReport {
    pub fn converged(&self) -> bool {
        self.status == ConvergenceKind::Converged
    }

    /// Queries issued by the attempt whose weights were returned.
    pub fn samples(&self) -> u64 {
        let attempts = &self.retries.attempts;
        match self.retries.succeeded_at {
            Some(i) => attempts[i].total_queries,
            None => attempts
                .iter()
                .min_by(|a, b| a.best_loss.total_cmp(&b.best_loss))
                .map_or(0, |a| a.total_queries),
        }
    }
}

fn population_init(cfg: &ExperimentConfig, init: &InitSection) -> Result<PopulationInit> {
    let known = |weights: &Option<PathBuf>| -> Result<MlpParams> {
        match weights {
            Some(path) => {
                let p = load_nrm1(path)?;
                if p.spec() != &cfg.spec {
                    return Err(Error::SpecMismatch(format!(
                        "{} does not match the configured architecture",
                        path.display()
                    )));
                }
                Ok(p)
            }
            None => Ok(init_glorot(&cfg.spec, cfg.oracle.training.seed)),
        }
    };
    Ok(match init {
        InitSection::Glorot => PopulationInit::Glorot,
        InitSection::SeedOne { weights } => PopulationInit::SeedOne(known(weights)?),
        InitSection::SeedAllNoisy { weights, noise_std } => PopulationInit::SeedAllNoisy {
            params: known(weights)?,
            noise_std: *noise_std,
        },
    })
}

fn sample_pools(cfg: &ExperimentConfig, sampler: &SamplerConfig) -> Result<SamplePools> {
    if !matches!(
        sampler.kind,
        SamplerKind::Dataset | SamplerKind::ExpandedDataset
    ) {
        return Ok(SamplePools::default());
    }
    let data = load_training_data(cfg)?;
    Ok(SamplePools {
        dataset: Some(data.dataset.inputs),
        expanded: data.expanded,
    })
}

/// Random probe inputs for classification agreement.
pub fn probe_inputs(n: usize, dim: usize, seed: u64) -> Array2<f32> {
    sample_gaussian(n, dim, seed ^ 0x9a0b_e5ee_d000).inputs
}

/// Reconstructs `blackbox` under `cfg` and evaluates the result.
pub fn run_reconstruction(
    cfg: &ExperimentConfig,
    blackbox: MlpParams,
    seed: u64,
) -> Result<(MlpParams, ReconstructReport)> {
    let section = cfg.reconstruction()?;
    if blackbox.spec() != &cfg.spec {
        return Err(Error::SpecMismatch(
            "black box does not match the configured architecture".into(),
        ));
    }
    let init = population_init(cfg, &section.init)?;
    let pools = sample_pools(cfg, &section.run.sampler)?;
    let oracle = QueryOracle::new(blackbox);
    let (best, retries) =
        reconstruct_with_retries(&oracle, &section.run, &init, &pools, seed, section.retries)?;
    let oracle_queries = oracle.query_count();
    let probes = probe_inputs(section.probes, cfg.spec.input_dim(), seed);
    let (evaluation, evaluation_error) =
        match evaluate_against_oracle(&oracle, &best, probes.view()) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let status = if retries.succeeded_at.is_some() {
        ConvergenceKind::Converged
    } else {
        retries
            .attempts
            .last()
            .map_or(ConvergenceKind::Running, |a| a.status)
    };
    let report = ReconstructReport {
        config: cfg.resolved(seed),
        seed,
        status,
        total_queries: retries.attempts.iter().map(|a| a.total_queries).sum(),
        retries,
        oracle_queries,
        evaluation,
        evaluation_error,
    };
    Ok((best, report))
}

/// Loads the black box from `blackbox`, reconstructs it and writes
/// `<stem>.nrm1` (best member) and `<stem>.json` (report).
pub fn cmd_reconstruct(
    cfg: &ExperimentConfig,
    blackbox: &Path,
    stem: &Path,
    seed: u64,
) -> Result<ReconstructReport> {
    let params = load_nrm1(blackbox)?;
    let (best, report) = run_reconstruction(cfg, params, seed)?;
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_nrm1(&best, with_ext(stem, "nrm1"))?;
    write_json(&report, &with_ext(stem, "json"))?;
    Ok(report)
}

/// Aligns `candidate` onto `reference` and compares them on `probes` random inputs.
pub fn cmd_align(
    candidate: &Path,
    reference: &Path,
    probes: usize,
    seed: u64,
) -> Result<AlignmentReport> {
    let a = load_nrm1(candidate)?;
    let b = load_nrm1(reference)?;
    if a.spec() != b.spec() {
        return Err(Error::SpecMismatch(format!(
            "{} is {:?} but {} is {:?}",
            candidate.display(),
            a.spec().widths(),
            reference.display(),
            b.spec().widths()
        )));
    }
    let x = probe_inputs(probes, a.spec().input_dim(), seed);
    align_and_compare(&a, &b, x.view())
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_id: String,
    pub samples: u64,
    pub max_eps: f64,
    pub max_eps_pct: f64,
    /// Per-matrix mean error, `;`-separated.
    pub mean_eps_per_matrix: String,
    pub status: ConvergenceKind,
    pub outer_iterations: usize,
    pub converged_at: Option<usize>,
    pub agreement_rate: f64,
}

impl SweepRow {
    pub fn from_report(id: &str, report: &ReconstructReport) -> Self {
        let attempt = match report.retries.succeeded_at {
            Some(i) => report.retries.attempts.get(i),
            None => report.retries.attempts.last(),
        };
        let (max_eps, max_eps_pct, per_matrix, agreement) = match &report.evaluation {
            Some(e) => (
                e.max_eps,
                e.max_eps_pct,
                e.mean_eps_per_matrix
                    .iter()
                    .map(|v| format!("{v:e}"))
                    .collect::<Vec<_>>()
                    .join(";"),
                e.agreement_rate,
            ),
            None => (f64::NAN, f64::NAN, String::new(), f64::NAN),
        };
        Self {
            config_id: id.to_string(),
            samples: report.samples(),
            max_eps,
            max_eps_pct,
            mean_eps_per_matrix: per_matrix,
            status: report.status,
            outer_iterations: attempt.map_or(0, |a| a.iterations.len()),
            converged_at: attempt.and_then(|a| a.converged_at),
            agreement_rate: agreement,
        }
    }
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Runs every variant in order, writing `<out_dir>/<id>.json` reports and
/// `<out_dir>/sweep.csv`. Black boxes shared between variants are trained once.
pub fn cmd_sweep(sweep: &SweepConfig, out_dir: &Path, seed: Option<u64>) -> Result<Vec<SweepRow>> {
    let variants = sweep.expand()?;
    std::fs::create_dir_all(out_dir)?;
    let mut cache: HashMap<String, MlpParams> = HashMap::new();
    let mut rows = Vec::with_capacity(variants.len());
    for (id, cfg) in &variants {
        let key = serde_json::to_string(&(&cfg.spec, &cfg.oracle))?;
        let blackbox = match cache.get(&key) {
            Some(p) => p.clone(),
            None => {
                let (p, _) = train_blackbox_params(cfg)?;
                cache.insert(key, p.clone());
                p
            }
        };
        let s = crate::config::resolve_seed(seed, cfg.seed)?;
        let (_, report) = run_reconstruction(cfg, blackbox, s)?;
        write_json(&report, &out_dir.join(format!("{id}.json")))?;
        rows.push(SweepRow::from_report(id, &report));
    }
    write_sweep_csv(&rows, &out_dir.join("sweep.csv"))?;
    Ok(rows)
}

/// Draws one batch from `kind` for inspection and dumps it to `<stem>.bin` and
/// `<stem>.json`. Committee batches use a fresh Glorot population of the
/// configured size; region resampling has no loss history and falls back to
/// its bootstrap draw.
pub fn cmd_gen_queries(
    cfg: &ExperimentConfig,
    kind: SamplerKind,
    q: usize,
    stem: &Path,
    seed: u64,
) -> Result<QueryBatch> {
    let (size, mut sampler, optimizer) = match &cfg.reconstruction {
        Some(r) => (r.run.population, r.run.sampler.clone(), r.run.optimizer),
        None => (8, SamplerConfig::new(kind), OptimizerKind::Adam),
    };
    sampler.kind = kind;
    let population = init_population(
        &cfg.spec,
        size,
        &PopulationInit::Glorot,
        optimizer,
        1e-3,
        seed,
    )?;
    let pools = sample_pools(cfg, &sampler)?;
    let empty = QueryDataset::new(cfg.spec.input_dim(), cfg.spec.output_dim());
    let batch = sample_batch(&sampler, &population, &empty, &pools, q, seed)?;
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    batch.dump(stem)?;
    Ok(batch)
}
