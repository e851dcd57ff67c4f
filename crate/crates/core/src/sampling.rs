//! Query synthesis.
//!
//! The committee generator optimizes a batch of inputs by gradient descent on
//! the negated mean pairwise disagreement of a frozen population. Outputs are
//! L1-normalized before comparison so that the optimizer cannot gain
//! disagreement simply by inflating output magnitudes. The remaining samplers are
//! the non-adaptive and adaptive baselines they are compared against.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{backward_from_trace, forward_traced, MlpParams};
use crate::optim::{OptimizerKind, OptimizerState, StepSchedule};

/// Norms at or below this are treated as zero by [`normalize_l1`].
pub const NORM_EPS: f32 = 1e-12;

/// Standard deviation of the committee generator's random starting inputs.
pub const COMMITTEE_INIT_STD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Committee,
    Gaussian,
    Uniform,
    Dataset,
    ExpandedDataset,
    EasyResample,
    HardResample,
}

/// A batch of synthesized query inputs, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub inputs: Array2<f32>,
    pub provenance: Provenance,
    pub seed: u64,
    /// Disagreement loss before the first and after every input update
    /// (committee batches only).
    pub history: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BatchSidecar {
    rows: usize,
    cols: usize,
    provenance: Provenance,
    seed: u64,
    dtype: String,
}

impl QueryBatch {
    fn plain(inputs: Array2<f32>, provenance: Provenance, seed: u64) -> Self {
        Self {
            inputs,
            provenance,
            seed,
            history: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Writes `<stem>.bin` (row-major little-endian `f32`) and `<stem>.json`.
    pub fn dump(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let mut bytes = Vec::with_capacity(4 * self.inputs.len());
        for v in self.inputs.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(stem.with_extension("bin"), bytes)?;
        let sidecar = BatchSidecar {
            rows: self.inputs.nrows(),
            cols: self.inputs.ncols(),
            provenance: self.provenance,
            seed: self.seed,
            dtype: "f32le".into(),
        };
        fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let sidecar: BatchSidecar =
            serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        let bytes = fs::read(stem.with_extension("bin"))?;
        if bytes.len() != 4 * sidecar.rows * sidecar.cols {
            return Err(Error::MalformedFile {
                offset: bytes.len() as u64,
                reason: format!(
                    "expected {} bytes for a {}x{} batch",
                    4 * sidecar.rows * sidecar.cols,
                    sidecar.rows,
                    sidecar.cols
                ),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self::plain(
            Array2::from_shape_vec((sidecar.rows, sidecar.cols), data).expect("sized"),
            sidecar.provenance,
            sidecar.seed,
        ))
    }
}

/// `v / ‖v‖₁`, or all zeros when the norm is at most [`NORM_EPS`].
pub fn normalize_l1(v: &[f32]) -> Vec<f32> {
    let norm: f32 = v.iter().map(|x| x.abs()).sum();
    if norm <= NORM_EPS {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// L1 distance between the L1-normalized vectors.
pub fn disagreement(u: &[f32], v: &[f32]) -> Result<f32> {
    if u.len() != v.len() {
        return Err(shape_err(format!(
            "disagreement between vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (fu, fv) = (normalize_l1(u), normalize_l1(v));
    Ok(fu.iter().zip(&fv).map(|(a, b)| (a - b).abs()).sum())
}

fn check_population_outputs(outputs: &[Array2<f32>]) -> Result<()> {
    if outputs.len() < 2 {
        return Err(Error::PopulationTooSmall(outputs.len()));
    }
    let dim = outputs[0].dim();
    if outputs.iter().any(|o| o.dim() != dim) {
        return Err(shape_err("population outputs have different shapes"));
    }
    Ok(())
}

/// Negated mean of the `p × p` pairwise disagreement matrix, averaged over the
/// batch rows. `outputs[k]` holds member `k`'s outputs for the batch.
pub fn disagreement_loss(outputs: &[Array2<f32>]) -> Result<f64> {
    Ok(disagreement_loss_grad(outputs)?.0)
}

/// [`disagreement_loss`] together with its gradient with respect to every
/// member's raw outputs.
pub fn disagreement_loss_grad(outputs: &[Array2<f32>]) -> Result<(f64, Vec<Array2<f32>>)> {
    check_population_outputs(outputs)?;
    let p = outputs.len();
    let (rows, cols) = outputs[0].dim();
    let mut grads: Vec<Array2<f32>> = (0..p).map(|_| Array2::zeros((rows, cols))).collect();
    if rows == 0 {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / (rows as f64 * (p * p) as f64);
    let mut total = 0.0f64;
    let mut normed = vec![vec![0.0f32; cols]; p];
    let mut norms = vec![0.0f32; p];
    let mut g_f = vec![vec![0.0f64; cols]; p];
    for r in 0..rows {
        for k in 0..p {
            let row = outputs[k].row(r);
            norms[k] = row.iter().map(|x| x.abs()).sum();
            let f = normalize_l1(row.as_slice().expect("standard layout"));
            normed[k].copy_from_slice(&f);
        }
        for gf in g_f.iter_mut() {
            gf.iter_mut().for_each(|v| *v = 0.0);
        }
        for i in 0..p {
            for j in (i + 1)..p {
                for c in 0..cols {
                    let d = normed[i][c] - normed[j][c];
                    // (i, j) and (j, i) both appear in the full matrix.
                    total += 2.0 * d.abs() as f64;
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    g_f[i][c] -= 2.0 * s * scale;
                    g_f[j][c] += 2.0 * s * scale;
                }
            }
        }
        // Back through f(u) = u / ‖u‖₁.
        for k in 0..p {
            let norm = norms[k];
            if norm <= NORM_EPS {
                continue;
            }
            let row = outputs[k].row(r);
            let dot: f64 = g_f[k]
                .iter()
                .zip(row.iter())
                .map(|(g, &u)| g * u as f64)
                .sum();
            let norm = norm as f64;
            for c in 0..cols {
                let u = row[c];
                let sign = if u > 0.0 {
                    1.0
                } else if u < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grads[k][[r, c]] = (g_f[k][c] / norm - sign * dot / (norm * norm)) as f32;
            }
        }
    }
    Ok((-total * scale, grads))
}

/// Disagreement loss of a frozen population on `inputs` and its gradient with
/// respect to the inputs.
pub fn disagreement_input_grad(
    population: &[MlpParams],
    inputs: ArrayView2<f32>,
) -> Result<(f64, Array2<f32>)> {
    let traces = population
        .iter()
        .map(|m| forward_traced(m, inputs))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Array2<f32>> = traces.iter().map(|t| t.output().clone()).collect();
    let (loss, out_grads) = disagreement_loss_grad(&outputs)?;
    let mut d_inputs = Array2::zeros(inputs.dim());
    for ((member, trace), up) in population.iter().zip(&traces).zip(&out_grads) {
        let g = backward_from_trace(member, inputs, trace, up.view())?;
        d_inputs += &g.d_inputs;
    }
    Ok((loss, d_inputs))
}

/// Settings of the input-optimization loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitteeConfig {
    pub epochs: usize,
    pub lr: f32,
    #[serde(default)]
    pub schedule: StepSchedule,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.05,
            schedule: StepSchedule::empty(),
        }
    }
}

fn check_population(population: &[MlpParams]) -> Result<()> {
    if population.len() < 2 {
        return Err(Error::PopulationTooSmall(population.len()));
    }
    let spec = population[0].spec();
    if population.iter().any(|m| m.spec() != spec) {
        return Err(Error::SpecMismatch(
            "committee members have different architectures".into(),
        ));
    }
    Ok(())
}

/// Synthesizes `q` inputs that maximize disagreement among `population`.
///
/// Inputs start at `N(0, 0.5)` and are updated with Adam for `config.epochs`
/// steps; the learning rate drops tenfold after every scheduled epoch. The
/// population is only borrowed immutably.
pub fn generate_committee_queries(
    population: &[MlpParams],
    q: usize,
    config: &CommitteeConfig,
    seed: u64,
) -> Result<QueryBatch> {
    check_population(population)?;
    if config.epochs == 0 || !(config.lr > 0.0) {
        return Err(Error::Config(
            "committee generation needs epochs >= 1 and a positive learning rate".into(),
        ));
    }
    let dim = population[0].spec().input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0f32, COMMITTEE_INIT_STD).unwrap();
    let mut inputs = Array2::from_shape_simple_fn((q, dim), || init.sample(&mut rng));
    let mut opt = OptimizerState::with_lr(OptimizerKind::Adam, config.lr);
    let mut history = Vec::with_capacity(config.epochs + 1);
    for epoch in 1..=config.epochs {
        let (loss, grad) = disagreement_input_grad(population, inputs.view())?;
        history.push(loss);
        {
            let slice = inputs.as_slice_mut().expect("standard layout");
            opt.step_tensors(&mut [slice], &[grad.as_slice().expect("standard layout")])?;
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("committee input optimization".into()));
        }
        if config.schedule.fires_at(epoch) {
            opt.set_lr(opt.lr() / StepSchedule::DIVISOR);
        }
    }
    history.push(disagreement_input_grad(population, inputs.view())?.0);
    Ok(QueryBatch {
        inputs,
        provenance: Provenance::Committee,
        seed,
        history,
    })
}

/// i.i.d. `N(0, 1)` inputs.
pub fn sample_gaussian(q: usize, dim: usize, seed: u64) -> QueryBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    QueryBatch::plain(
        Array2::from_shape_simple_fn((q, dim), || normal.sample(&mut rng)),
        Provenance::Gaussian,
        seed,
    )
}

/// i.i.d. uniform inputs on `[-1, 1]`.
pub fn sample_uniform(q: usize, dim: usize, seed: u64) -> QueryBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = Uniform::new_inclusive(-1.0f32, 1.0).unwrap();
    QueryBatch::plain(
        Array2::from_shape_simple_fn((q, dim), || uniform.sample(&mut rng)),
        Provenance::Uniform,
        seed,
    )
}

/// `q` rows drawn without replacement (all rows if fewer) from a fixed pool.
pub fn sample_rows(
    pool: ArrayView2<f32>,
    q: usize,
    provenance: Provenance,
    seed: u64,
) -> QueryBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = q.min(pool.nrows());
    let picks = rand::seq::index::sample(&mut rng, pool.nrows(), q).into_vec();
    QueryBatch::plain(pool.select(Axis(0), &picks), provenance, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Lowest-loss inputs.
    Easy,
    /// Highest-loss inputs.
    Hard,
}

/// Recombines the features of the `k` easiest or hardest existing inputs into
/// `n` new ones: every feature is copied from a uniformly chosen donor, then
/// `N(0, noise_std)` noise is added.
pub fn resample_regions(
    inputs: ArrayView2<f32>,
    per_sample_losses: &[f64],
    k: usize,
    n: usize,
    region: Region,
    noise_std: f32,
    seed: u64,
) -> Result<QueryBatch> {
    if inputs.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if per_sample_losses.len() != inputs.nrows() {
        return Err(shape_err(format!(
            "{} losses for {} inputs",
            per_sample_losses.len(),
            inputs.nrows()
        )));
    }
    if k == 0 || k > inputs.nrows() || n == 0 {
        return Err(Error::Config(format!(
            "resampling needs 1 <= k <= {} and n >= 1, got k={k}, n={n}",
            inputs.nrows()
        )));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Config("noise std must be nonnegative".into()));
    }
    // Descending by loss, ties by index.
    let mut order: Vec<usize> = (0..inputs.nrows()).collect();
    order.sort_by(|&a, &b| {
        per_sample_losses[b]
            .total_cmp(&per_sample_losses[a])
            .then(a.cmp(&b))
    });
    let donors: Vec<usize> = match region {
        Region::Hard => order[..k].to_vec(),
        Region::Easy => order[order.len() - k..].to_vec(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = inputs.ncols();
    let mut out = Array2::zeros((n, dim));
    let noise = Normal::new(0.0f32, noise_std).unwrap();
    for i in 0..n {
        for j in 0..dim {
            let donor = donors[rng.random_range(0..k)];
            let mut v = inputs[[donor, j]];
            if noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            out[[i, j]] = v;
        }
    }
    let provenance = match region {
        Region::Easy => Provenance::EasyResample,
        Region::Hard => Provenance::HardResample,
    };
    Ok(QueryBatch::plain(out, provenance, seed))
}

/// Donor indices chosen by [`resample_regions`], exposed for inspection.
pub fn region_donors(per_sample_losses: &[f64], k: usize, region: Region) -> Vec<usize> {
    let mut order: Vec<usize> = (0..per_sample_losses.len()).collect();
    order.sort_by(|&a, &b| {
        per_sample_losses[b]
            .total_cmp(&per_sample_losses[a])
            .then(a.cmp(&b))
    });
    let k = k.min(order.len());
    match region {
        Region::Hard => order[..k].to_vec(),
        Region::Easy => order[order.len() - k..].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_glorot, Activation, MlpSpec};
    use ndarray::array;

    #[test]
    fn l1_normalization() {
        assert_eq!(normalize_l1(&[2.0, -2.0]), vec![0.5, -0.5]);
        assert_eq!(normalize_l1(&[0.0, 0.0]), vec![0.0, 0.0]);
        let v = [0.3f32, -1.2, 4.0];
        let scaled: Vec<f32> = v.iter().map(|x| x * 7.5).collect();
        for (a, b) in normalize_l1(&v).iter().zip(normalize_l1(&scaled)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn disagreement_values() {
        assert_eq!(disagreement(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((disagreement(&[1.0, 1.0], &[1.0, -1.0]).unwrap() - 1.0).abs() < 1e-7);
        assert!(disagreement(&[2.0, 1.0], &[6.0, 3.0]).unwrap().abs() < 1e-7);
        assert!(disagreement(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_member_loss() {
        let a = array![[1.0f32, 0.0]];
        let b = array![[0.0f32, 1.0]];
        assert!((disagreement_loss(&[a.clone(), b]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(disagreement_loss(&[a.clone(), a.clone()]).unwrap(), 0.0);
        assert!(matches!(
            disagreement_loss(&[a]),
            Err(Error::PopulationTooSmall(1))
        ));
    }

    #[test]
    fn identical_population_has_no_signal() {
        let spec = MlpSpec::new(vec![5, 4, 3], Activation::default()).unwrap();
        let m = init_glorot(&spec, 1);
        let pop = vec![m.clone(), m.clone(), m];
        let cfg = CommitteeConfig {
            epochs: 5,
            lr: 0.1,
            schedule: StepSchedule::empty(),
        };
        let batch = generate_committee_queries(&pop, 10, &cfg, 3).unwrap();
        assert!(batch.history.iter().all(|&l| l == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = Normal::new(0.0f32, COMMITTEE_INIT_STD).unwrap();
        let start = Array2::from_shape_simple_fn((10, 5), || init.sample(&mut rng));
        assert_eq!(batch.inputs, start);
    }

    #[test]
    fn committee_rejects_bad_population() {
        let spec = MlpSpec::new(vec![3, 2], Activation::default()).unwrap();
        let other = MlpSpec::new(vec![3, 4, 2], Activation::default()).unwrap();
        let cfg = CommitteeConfig::default();
        assert!(matches!(
            generate_committee_queries(&[init_glorot(&spec, 0)], 4, &cfg, 0),
            Err(Error::PopulationTooSmall(1))
        ));
        assert!(matches!(
            generate_committee_queries(
                &[init_glorot(&spec, 0), init_glorot(&other, 0)],
                4,
                &cfg,
                0
            ),
            Err(Error::SpecMismatch(_))
        ));
    }

    #[test]
    fn overflowing_population_aborts_batch() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::default()).unwrap();
        let huge = |seed| {
            let flat: Vec<f32> = init_glorot(&spec, seed)
                .to_flat()
                .iter()
                .map(|v| v * 1e30)
                .collect();
            MlpParams::from_flat(&spec, &flat).unwrap()
        };
        let cfg = CommitteeConfig {
            epochs: 3,
            lr: 0.1,
            schedule: StepSchedule::empty(),
        };
        assert!(matches!(
            generate_committee_queries(&[huge(0), huge(1)], 4, &cfg, 0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn gaussian_and_uniform_samplers() {
        let g = sample_gaussian(1000, 100, 5);
        let n = g.inputs.len() as f64;
        let mean = g.inputs.iter().map(|&v| v as f64).sum::<f64>() / n;
        let std = (g
            .inputs
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        assert!((std - 1.0).abs() < 0.05);
        assert_eq!(g, sample_gaussian(1000, 100, 5));
        let u = sample_uniform(500, 20, 5);
        assert!(u.inputs.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert_eq!(u, sample_uniform(500, 20, 5));
    }

    #[test]
    fn resample_single_donor() {
        let x = array![[1.0f32, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let b = resample_regions(x.view(), &[0.1, 9.0, 0.2], 1, 4, Region::Hard, 0.0, 1).unwrap();
        for row in b.inputs.axis_iter(Axis(0)) {
            assert_eq!(row.to_vec(), vec![3.0, 4.0]);
        }
        assert_eq!(b.provenance, Provenance::HardResample);
    }

    #[test]
    fn resample_identical_donors_without_noise() {
        let x = array![[1.5f32, -2.0], [1.5, -2.0], [9.0, 9.0]];
        let b = resample_regions(x.view(), &[0.0, 0.0, 5.0], 2, 6, Region::Easy, 0.0, 2).unwrap();
        assert!(b
            .inputs
            .axis_iter(Axis(0))
            .all(|r| r.to_vec() == vec![1.5, -2.0]));
    }

    #[test]
    fn hard_region_donors() {
        assert_eq!(region_donors(&[5.0, 1.0, 3.0], 2, Region::Hard), vec![0, 2]);
        assert_eq!(region_donors(&[5.0, 1.0, 3.0], 2, Region::Easy), vec![2, 1]);
        // Donor values come only from the selected rows.
        let x = array![[5.0f32], [1.0], [3.0]];
        let b = resample_regions(x.view(), &[5.0, 1.0, 3.0], 2, 50, Region::Hard, 0.0, 0).unwrap();
        assert!(b.inputs.iter().all(|&v| v == 5.0 || v == 3.0));
    }

    #[test]
    fn resample_errors() {
        let empty = Array2::<f32>::zeros((0, 2));
        assert!(matches!(
            resample_regions(empty.view(), &[], 1, 1, Region::Hard, 0.0, 0),
            Err(Error::EmptyDataset)
        ));
        let x = array![[1.0f32]];
        assert!(resample_regions(x.view(), &[0.0], 2, 1, Region::Hard, 0.0, 0).is_err());
    }

    #[test]
    fn batch_dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample_uniform(7, 3, 11);
        let stem = dir.path().join("batch");
        b.dump(&stem).unwrap();
        let back = QueryBatch::load(&stem).unwrap();
        assert_eq!(back, b);
        let meta: serde_json::Value =
            serde_json::from_slice(&fs::read(stem.with_extension("json")).unwrap()).unwrap();
        assert_eq!(meta["provenance"], "uniform");
        assert_eq!(meta["rows"], 7);
    }
}
