//! Population-based reconstruction.
//!
//! Each outer iteration synthesizes a batch of queries, labels it through the
//! oracle, appends it to the query dataset and trains every surrogate on the
//! whole dataset with a mean-L1 output loss. The surrogate with the lowest loss
//! is returned together with a per-iteration report.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::align::greedy_align;
use crate::error::{shape_err, Error, Result};
use crate::nn::{
    backward_from_trace, forward, forward_traced, init_glorot, l1_output_loss, MlpParams, MlpSpec,
};
use crate::optim::{apply_schedule, OptimizerKind, OptimizerState, StepSchedule};
use crate::oracle::QueryOracle;
use crate::sampling::{
    generate_committee_queries, resample_regions, sample_gaussian, sample_rows, sample_uniform,
    CommitteeConfig, Provenance, QueryBatch, Region,
};

/// Append-only store of oracle-labelled queries.
#[derive(Debug, Clone)]
pub struct QueryDataset {
    inputs: Array2<f32>,
    outputs: Array2<f32>,
}

impl QueryDataset {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            inputs: Array2::zeros((0, input_dim)),
            outputs: Array2::zeros((0, output_dim)),
        }
    }

    pub fn append(&mut self, inputs: ArrayView2<f32>, outputs: ArrayView2<f32>) -> Result<()> {
        if inputs.nrows() != outputs.nrows()
            || inputs.ncols() != self.inputs.ncols()
            || outputs.ncols() != self.outputs.ncols()
        {
            return Err(shape_err(format!(
                "cannot append {:?} inputs / {:?} outputs to a {}-in {}-out dataset",
                inputs.dim(),
                outputs.dim(),
                self.inputs.ncols(),
                self.outputs.ncols()
            )));
        }
        self.inputs.append(Axis(0), inputs).expect("checked shape");
        self.outputs
            .append(Axis(0), outputs)
            .expect("checked shape");
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn inputs(&self) -> ArrayView2<'_, f32> {
        self.inputs.view()
    }

    pub fn outputs(&self) -> ArrayView2<'_, f32> {
        self.outputs.view()
    }

    /// Mean absolute oracle output; 0 when empty.
    pub fn mean_abs_output(&self) -> f64 {
        if self.outputs.is_empty() {
            return 0.0;
        }
        self.outputs.iter().map(|v| v.abs() as f64).sum::<f64>() / self.outputs.len() as f64
    }
}

/// One surrogate with its own optimizer state and shuffling stream.
#[derive(Debug, Clone)]
pub struct Member {
    pub params: MlpParams,
    pub optimizer: OptimizerState,
    pub seed: u64,
    rng: ChaCha8Rng,
    /// Mean L1 loss on the query dataset after the latest training round.
    pub loss: f64,
    pub reinitializations: usize,
}

impl Member {
    pub fn new(params: MlpParams, optimizer: OptimizerState, seed: u64) -> Self {
        Self {
            params,
            optimizer,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
            loss: f64::INFINITY,
            reinitializations: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Population {
    spec: MlpSpec,
    pub members: Vec<Member>,
}

impl Population {
    pub fn new(spec: MlpSpec, members: Vec<Member>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::PopulationTooSmall(members.len()));
        }
        if members.iter().any(|m| m.params.spec() != &spec) {
            return Err(Error::SpecMismatch(
                "population members differ from spec".into(),
            ));
        }
        Ok(Self { spec, members })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn params(&self) -> Vec<MlpParams> {
        self.members.iter().map(|m| m.params.clone()).collect()
    }

    pub fn set_lr(&mut self, lr: f32) {
        for m in &mut self.members {
            m.optimizer.set_lr(lr);
        }
    }

    /// Index of the member with the lowest loss (lowest index on ties).
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.members.iter().enumerate() {
            if m.loss < self.members[best].loss {
                best = i;
            }
        }
        best
    }
}

/// How the population is seeded.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PopulationInit {
    /// Independent Glorot draws.
    #[default]
    Glorot,
    /// Member 0 starts at the given weights, the rest are Glorot draws.
    SeedOne(MlpParams),
    /// Every member starts at the given weights plus `N(0, noise_std)` noise.
    SeedAllNoisy { params: MlpParams, noise_std: f32 },
}

fn member_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add(0x1000 + index as u64)
}

pub fn init_population(
    spec: &MlpSpec,
    size: usize,
    init: &PopulationInit,
    optimizer: OptimizerKind,
    lr: f32,
    seed: u64,
) -> Result<Population> {
    let mut members = Vec::with_capacity(size);
    for i in 0..size {
        let s = member_seed(seed, i);
        let params = match init {
            PopulationInit::Glorot => init_glorot(spec, s),
            PopulationInit::SeedOne(p) if i == 0 => p.clone(),
            PopulationInit::SeedOne(_) => init_glorot(spec, s),
            PopulationInit::SeedAllNoisy { params, noise_std } => {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let noise = Normal::new(0.0f32, *noise_std)
                    .map_err(|e| Error::Config(format!("noise std: {e}")))?;
                let flat: Vec<f32> = params
                    .to_flat()
                    .iter()
                    .map(|v| v + noise.sample(&mut rng))
                    .collect();
                MlpParams::from_flat(spec, &flat)?
            }
        };
        if params.spec() != spec {
            return Err(Error::SpecMismatch(
                "seed weights do not match the spec".into(),
            ));
        }
        members.push(Member::new(
            params,
            OptimizerState::with_lr(optimizer, lr),
            s,
        ));
    }
    Population::new(spec.clone(), members)
}

/// Per-row mean absolute output error of `params` on the dataset.
pub fn per_sample_l1(params: &MlpParams, data: &QueryDataset) -> Result<Vec<f64>> {
    let pred = forward(params, data.inputs())?;
    Ok(pred
        .axis_iter(Axis(0))
        .zip(data.outputs().axis_iter(Axis(0)))
        .map(|(p, t)| {
            p.iter()
                .zip(t.iter())
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .sum::<f64>()
                / p.len().max(1) as f64
        })
        .collect())
}

/// Mean L1 output loss of `params` over the whole dataset.
pub fn dataset_loss(params: &MlpParams, data: &QueryDataset) -> Result<f64> {
    const CHUNK: usize = 8192;
    let mut total = 0.0;
    let n = data.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let x = data.inputs.slice(s![start..end, ..]);
        let y = data.outputs.slice(s![start..end, ..]);
        let pred = forward(params, x)?;
        let (loss, _) = l1_output_loss(pred.view(), y)?;
        total += loss * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

fn train_member(
    member: &mut Member,
    data: &QueryDataset,
    epochs: usize,
    batch_size: usize,
) -> Result<()> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut member.rng);
        for chunk in order.chunks(batch_size) {
            let x = data.inputs.select(Axis(0), chunk);
            let y = data.outputs.select(Axis(0), chunk);
            let trace = forward_traced(&member.params, x.view())?;
            let (_, up) = l1_output_loss(trace.output().view(), y.view())?;
            let grads = backward_from_trace(&member.params, x.view(), &trace, up.view())?;
            member.optimizer.step(&mut member.params, &grads)?;
        }
        if !member.params.is_finite() {
            return Err(Error::NonFinite("surrogate training".into()));
        }
    }
    Ok(())
}

/// Trains every member independently for `epochs` passes over `data` with
/// mini-batches of `batch_size`, then refreshes each member's loss. A member
/// whose parameters become non-finite is re-initialized from a fresh Glorot draw.
/// Returns the number of re-initializations.
pub fn train_population(
    population: &mut Population,
    data: &QueryDataset,
    epochs: usize,
    batch_size: usize,
) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let spec = population.spec.clone();
    let mut resets = 0;
    for member in &mut population.members {
        let snapshot = member.params.clone();
        match train_member(member, data, epochs, batch_size) {
            Ok(()) => {}
            Err(Error::NonFinite(_)) => {
                member.reinitializations += 1;
                resets += 1;
                let s = member_seed(member.seed, 0x7fff_0000 + member.reinitializations);
                member.params = init_glorot(&spec, s);
                member.optimizer.reset();
                let _ = snapshot;
            }
            Err(e) => return Err(e),
        }
        member.loss = dataset_loss(&member.params, data)?;
        if !member.loss.is_finite() {
            member.loss = f64::INFINITY;
        }
    }
    Ok(resets)
}

/// Convergence and divergence thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Max aligned parameter difference for two members to count as agreeing.
    pub agree_eps: f64,
    /// Loss at or below which the best member counts as exact. Scaled by the
    /// mean absolute oracle output when that exceeds 1, since the f32 rounding
    /// floor of the loss grows with the output magnitude.
    pub loss_eps: f64,
    /// Relative improvement required over the window to not be stuck.
    pub rel_improve: f64,
    /// Window length in outer iterations.
    pub window: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            agree_eps: 1e-4,
            loss_eps: 2.5e-7,
            rel_improve: 0.01,
            window: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceKind {
    Converged,
    /// Loss keeps falling but members never come to agree.
    DivergedMaxStuck,
    /// Loss has stopped falling.
    DivergedMeanStuck,
    Running,
}

impl ConvergenceKind {
    pub fn is_diverged(self) -> bool {
        matches!(
            self,
            ConvergenceKind::DivergedMaxStuck | ConvergenceKind::DivergedMeanStuck
        )
    }
}

/// Snapshot of the population used for convergence decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEvidence {
    /// Member pairs whose aligned max parameter difference is within `agree_eps`.
    pub agreement_pairs: usize,
    /// Smallest aligned max parameter difference over all member pairs.
    pub min_pair_max_diff: f64,
    pub min_loss: f64,
    pub mean_loss: f64,
    /// Mean absolute oracle output over the query dataset.
    #[serde(default)]
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStatus {
    pub kind: ConvergenceKind,
    pub evidence: ConvergenceEvidence,
    /// Minimum loss over the trailing window, oldest first.
    pub loss_window: Vec<f64>,
}

/// Pairwise agreement after greedy alignment, plus the losses on `data`.
pub fn population_evidence(
    population: &Population,
    data: &QueryDataset,
    agree_eps: f64,
) -> Result<ConvergenceEvidence> {
    let n = population.len();
    let mut pairs = 0;
    let mut min_diff = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = &population.members[i].params;
            let b = &population.members[j].params;
            let diff = match greedy_align(a, b) {
                Ok(aligned) => aligned.max_abs_diff(b)? as f64,
                // A dead neuron has no gauge; such a pair cannot agree.
                Err(Error::ZeroColumn { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            min_diff = min_diff.min(diff);
            if diff <= agree_eps {
                pairs += 1;
            }
        }
    }
    let losses: Vec<f64> = population.members.iter().map(|m| m.loss).collect();
    Ok(ConvergenceEvidence {
        agreement_pairs: pairs,
        min_pair_max_diff: min_diff,
        min_loss: losses.iter().copied().fold(f64::INFINITY, f64::min),
        mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
        output_scale: data.mean_abs_output(),
    })
}

/// Classifies the latest evidence given the history of earlier iterations
/// (oldest first, not including `current`).
pub fn classify(
    current: &ConvergenceEvidence,
    history: &[ConvergenceEvidence],
    thresholds: &Thresholds,
) -> ConvergenceStatus {
    let w = thresholds.window;
    let loss_window: Vec<f64> = history
        .iter()
        .chain(std::iter::once(current))
        .rev()
        .take(w + 1)
        .map(|e| e.min_loss)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let kind = if current.agreement_pairs >= 1
        && current.min_loss <= thresholds.loss_eps * current.output_scale.max(1.0)
    {
        ConvergenceKind::Converged
    } else if w > 0 && history.len() >= w {
        let past = &history[history.len() - w];
        let improved = |now: f64, then: f64| now < then * (1.0 - thresholds.rel_improve);
        if !improved(current.min_loss, past.min_loss) {
            ConvergenceKind::DivergedMeanStuck
        } else if !improved(current.min_pair_max_diff, past.min_pair_max_diff) {
            ConvergenceKind::DivergedMaxStuck
        } else {
            ConvergenceKind::Running
        }
    } else {
        ConvergenceKind::Running
    };
    ConvergenceStatus {
        kind,
        evidence: current.clone(),
        loss_window,
    }
}

/// Converged iff at least two members agree within `agree_eps` after alignment
/// and the best member's loss is at most the (output-scaled) `loss_eps`; otherwise the trailing
/// window decides between running and the two divergence modes.
pub fn check_convergence(
    population: &Population,
    data: &QueryDataset,
    history: &[ConvergenceEvidence],
    thresholds: &Thresholds,
) -> Result<ConvergenceStatus> {
    let evidence = population_evidence(population, data, thresholds.agree_eps)?;
    Ok(classify(&evidence, history, thresholds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Committee,
    Gaussian,
    Uniform,
    Dataset,
    ExpandedDataset,
    EasyResample,
    HardResample,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 7] = [
        SamplerKind::Dataset,
        SamplerKind::ExpandedDataset,
        SamplerKind::Gaussian,
        SamplerKind::Uniform,
        SamplerKind::EasyResample,
        SamplerKind::HardResample,
        SamplerKind::Committee,
    ];

    /// Samplers that draw their whole budget before any training.
    pub fn is_non_adaptive(self) -> bool {
        matches!(
            self,
            SamplerKind::Gaussian
                | SamplerKind::Uniform
                | SamplerKind::Dataset
                | SamplerKind::ExpandedDataset
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    #[serde(default)]
    pub committee: CommitteeConfig,
    /// Donor count for region resampling; defaults to a tenth of `q`.
    #[serde(default)]
    pub resample_k: Option<usize>,
    #[serde(default = "default_noise_std")]
    pub noise_std: f32,
}

fn default_noise_std() -> f32 {
    0.05
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind) -> Self {
        Self {
            kind,
            committee: CommitteeConfig::default(),
            resample_k: None,
            noise_std: default_noise_std(),
        }
    }
}

/// Fixed input pools for the dataset-based samplers.
#[derive(Debug, Clone, Default)]
pub struct SamplePools {
    pub dataset: Option<Array2<f32>>,
    pub expanded: Option<Array2<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Population size `p`.
    pub population: usize,
    /// Queries per outer iteration `q`.
    pub queries_per_iteration: usize,
    /// Outer iterations `o`.
    pub outer_iterations: usize,
    /// Training epochs per outer iteration `e`.
    pub epochs: usize,
    /// Initial surrogate learning rate `α`.
    pub lr: f32,
    /// Outer iterations after which `α` is divided by ten.
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_true")]
    pub stop_on_convergence: bool,
}

fn default_batch() -> usize {
    256
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

fn default_true() -> bool {
    true
}

impl ReconstructConfig {
    /// Settings that reconstruct small (a few hundred parameter) networks in
    /// about a minute: a long exploratory phase at `1e-2`, then six tenfold
    /// decays that walk the surrogates down to the `f32` loss floor.
    pub fn desk_scale(sampler: SamplerKind) -> Self {
        Self {
            population: 8,
            queries_per_iteration: 256,
            outer_iterations: 50,
            epochs: 50,
            lr: 1e-2,
            schedule: StepSchedule::new(vec![12, 18, 24, 30, 36, 40]).expect("increasing"),
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            sampler: SamplerConfig::new(sampler),
            thresholds: Thresholds::default(),
            stop_on_convergence: true,
        }
    }

    /// Total oracle queries the run may issue.
    pub fn query_budget(&self) -> usize {
        self.queries_per_iteration * self.outer_iterations
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::PopulationTooSmall(self.population));
        }
        if self.queries_per_iteration == 0 || self.batch_size == 0 {
            return Err(Error::Config("q and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} is not positive",
                self.lr
            )));
        }
        Ok(())
    }
}

/// One row of the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub min_loss: f64,
    pub mean_loss: f64,
    pub member_losses: Vec<f64>,
    pub lr: f32,
    pub query_count: u64,
    pub dataset_size: usize,
    pub agreement_pairs: usize,
    pub min_pair_max_diff: f64,
    pub status: ConvergenceKind,
    /// Disagreement loss before and after input optimization (committee only).
    pub disagreement: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: ReconstructConfig,
    pub iterations: Vec<IterationRecord>,
    pub status: ConvergenceKind,
    /// First outer iteration at which the run was classified as converged.
    pub converged_at: Option<usize>,
    /// Oracle queries issued by this run.
    pub total_queries: u64,
    pub best_member: usize,
    pub best_loss: f64,
    pub reinitializations: usize,
    /// Last window of loss values backing a divergence verdict.
    pub final_status: ConvergenceStatus,
}

/// Draws `q` query inputs with the configured sampler. Region resampling uses
/// the best member's per-sample loss on `data` and falls back to `N(0, 0.5)`
/// while `data` is empty.
pub fn sample_batch(
    sampler: &SamplerConfig,
    population: &Population,
    data: &QueryDataset,
    pools: &SamplePools,
    q: usize,
    seed: u64,
) -> Result<QueryBatch> {
    let dim = population.spec().input_dim();
    match sampler.kind {
        SamplerKind::Committee => {
            let members = population.params();
            let mut cfg = sampler.committee.clone();
            // A diverging input optimization is retried with a smaller step.
            for _ in 0..4 {
                match generate_committee_queries(&members, q, &cfg, seed) {
                    Err(Error::NonFinite(_)) => cfg.lr /= 10.0,
                    other => return other,
                }
            }
            generate_committee_queries(&members, q, &cfg, seed)
        }
        SamplerKind::Gaussian => Ok(sample_gaussian(q, dim, seed)),
        SamplerKind::Uniform => Ok(sample_uniform(q, dim, seed)),
        SamplerKind::Dataset => {
            let pool = pools
                .dataset
                .as_ref()
                .ok_or_else(|| Error::Config("dataset sampler needs a dataset".into()))?;
            Ok(sample_rows(
                pool.view(),
                pool.nrows(),
                Provenance::Dataset,
                seed,
            ))
        }
        SamplerKind::ExpandedDataset => {
            let mut pool = pools
                .dataset
                .clone()
                .ok_or_else(|| Error::Config("expanded dataset sampler needs a dataset".into()))?;
            if let Some(extra) = &pools.expanded {
                pool.append(Axis(0), extra.view())
                    .map_err(|_| shape_err("expanded pool width differs from dataset"))?;
            }
            let n = pool.nrows();
            Ok(sample_rows(
                pool.view(),
                n,
                Provenance::ExpandedDataset,
                seed,
            ))
        }
        SamplerKind::EasyResample | SamplerKind::HardResample => {
            if data.is_empty() {
                // Nothing to resample from yet: bootstrap at the data scale.
                let mut b = sample_gaussian(q, dim, seed);
                b.inputs.mapv_inplace(|v| v * 0.5);
                return Ok(b);
            }
            let best = &population.members[population.best()].params;
            let losses = per_sample_l1(best, data)?;
            let k = sampler
                .resample_k
                .unwrap_or((q / 10).max(1))
                .clamp(1, data.len());
            let region = if sampler.kind == SamplerKind::EasyResample {
                Region::Easy
            } else {
                Region::Hard
            };
            resample_regions(
                data.inputs(),
                &losses,
                k,
                q,
                region,
                sampler.noise_std,
                seed,
            )
        }
    }
}

/// Runs the reconstruction loop against `oracle` and returns the lowest-loss
/// surrogate with its report.
pub fn reconstruct(
    oracle: &QueryOracle,
    config: &ReconstructConfig,
    init: &PopulationInit,
    pools: &SamplePools,
    seed: u64,
) -> Result<(MlpParams, RunReport)> {
    config.validate()?;
    let spec = oracle.spec().clone();
    let mut population = init_population(
        &spec,
        config.population,
        init,
        config.optimizer,
        config.lr,
        seed,
    )?;
    reconstruct_population(oracle, config, &mut population, pools, seed)
}

/// Same as [`reconstruct`] with a caller-supplied starting population.
pub fn reconstruct_population(
    oracle: &QueryOracle,
    config: &ReconstructConfig,
    population: &mut Population,
    pools: &SamplePools,
    seed: u64,
) -> Result<(MlpParams, RunReport)> {
    reconstruct_observed(oracle, config, population, pools, seed, |_, _| {})
}

/// Same as [`reconstruct_population`], calling `observe` after every outer
/// iteration with that iteration's record and the trained population.
pub fn reconstruct_observed(
    oracle: &QueryOracle,
    config: &ReconstructConfig,
    population: &mut Population,
    pools: &SamplePools,
    seed: u64,
    mut observe: impl FnMut(&IterationRecord, &Population),
) -> Result<(MlpParams, RunReport)> {
    config.validate()?;
    if population.spec() != oracle.spec() {
        return Err(Error::SpecMismatch(
            "surrogate architecture differs from the oracle".into(),
        ));
    }
    let spec = population.spec().clone();
    let queries_before = oracle.query_count();
    let mut data = QueryDataset::new(spec.input_dim(), spec.output_dim());
    let mut lr_state = OptimizerState::with_lr(config.optimizer, config.lr);
    population.set_lr(lr_state.lr());
    let mut history: Vec<ConvergenceEvidence> = Vec::new();
    let mut records = Vec::new();
    let mut reinit = 0;
    let mut converged_at = None;
    let mut last_status = None;
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ab_1e5e_ed00);

    for iteration in 1..=config.outer_iterations {
        let batch_seed = rand::Rng::random::<u64>(&mut sample_rng);
        let non_adaptive = config.sampler.kind.is_non_adaptive();
        let mut disagreement = None;
        if !non_adaptive || iteration == 1 {
            let q = if non_adaptive {
                config.queries_per_iteration * config.outer_iterations
            } else {
                config.queries_per_iteration
            };
            let batch = sample_batch(&config.sampler, population, &data, pools, q, batch_seed)?;
            if let (Some(first), Some(last)) = (batch.history.first(), batch.history.last()) {
                disagreement = Some((*first, *last));
            }
            let labels = oracle.query(batch.inputs.view())?;
            data.append(batch.inputs.view(), labels.view())?;
        }

        reinit += train_population(population, &data, config.epochs, config.batch_size)?;

        let evidence = population_evidence(population, &data, config.thresholds.agree_eps)?;
        let status = classify(&evidence, &history, &config.thresholds);
        history.push(evidence.clone());
        records.push(IterationRecord {
            iteration,
            min_loss: evidence.min_loss,
            mean_loss: evidence.mean_loss,
            member_losses: population.members.iter().map(|m| m.loss).collect(),
            lr: lr_state.lr(),
            query_count: oracle.query_count() - queries_before,
            dataset_size: data.len(),
            agreement_pairs: evidence.agreement_pairs,
            min_pair_max_diff: evidence.min_pair_max_diff,
            status: status.kind,
            disagreement,
        });
        observe(records.last().expect("just pushed"), population);
        let converged = status.kind == ConvergenceKind::Converged;
        if converged && converged_at.is_none() {
            converged_at = Some(iteration);
        }
        last_status = Some(status);
        if converged && config.stop_on_convergence {
            break;
        }

        lr_state = apply_schedule(lr_state, iteration, &config.schedule);
        population.set_lr(lr_state.lr());
    }

    let best = population.best();
    let final_status = last_status.unwrap_or_else(|| {
        let evidence = ConvergenceEvidence {
            agreement_pairs: 0,
            min_pair_max_diff: f64::INFINITY,
            min_loss: f64::INFINITY,
            mean_loss: f64::INFINITY,
            output_scale: 0.0,
        };
        classify(&evidence, &[], &config.thresholds)
    });
    let report = RunReport {
        seed,
        config: config.clone(),
        iterations: records,
        status: final_status.kind,
        converged_at,
        total_queries: oracle.query_count() - queries_before,
        best_member: best,
        best_loss: population.members[best].loss,
        reinitializations: reinit,
        final_status,
    };
    Ok((population.members[best].params.clone(), report))
}

/// Every attempt of a run with restarts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryReport {
    pub attempts: Vec<RunReport>,
    pub succeeded_at: Option<usize>,
}

/// Restarts with a fresh seed while the run does not converge, up to `retries`
/// additional attempts. Query counts stay per attempt.
pub fn reconstruct_with_retries(
    oracle: &QueryOracle,
    config: &ReconstructConfig,
    init: &PopulationInit,
    pools: &SamplePools,
    seed: u64,
    retries: usize,
) -> Result<(MlpParams, RetryReport)> {
    let mut attempts = Vec::new();
    let mut best: Option<(MlpParams, f64)> = None;
    for attempt in 0..=retries {
        let s = seed.wrapping_add(attempt as u64 * 0x0001_0000_0001);
        let (params, report) = reconstruct(oracle, config, init, pools, s)?;
        let converged = report.status == ConvergenceKind::Converged;
        if best.as_ref().map_or(true, |(_, l)| report.best_loss < *l) {
            best = Some((params.clone(), report.best_loss));
        }
        attempts.push(report);
        if converged {
            return Ok((
                params,
                RetryReport {
                    attempts,
                    succeeded_at: Some(attempt),
                },
            ));
        }
    }
    Ok((
        best.expect("at least one attempt").0,
        RetryReport {
            attempts,
            succeeded_at: None,
        },
    ))
}
