//! Network isomorphisms, canonical forms, greedy column matching and the error
//! metrics reported for a reconstruction.
//!
//! A hidden neuron is identified with its incoming column plus its bias (the
//! bias scales together with the column under the scaling isomorphism), so all
//! norms, sums and distances below are taken over that extended column.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward, MlpParams};
use crate::oracle::{argmax, QueryOracle};

/// Column norms at or below this cannot be normalized.
pub const ZERO_NORM: f32 = 1e-12;

const UNIT_TOLERANCE: f32 = 4.0 * f32::EPSILON;

/// Capability required to read an oracle's hidden parameters. Only this module
/// can create one, and it only does so for final evaluation.
#[derive(Debug)]
pub struct EvaluationKey {
    _private: (),
}

/// A function-preserving reparameterization of one hidden neuron or layer.
/// `layer` indexes hidden layers: it acts on the columns of weight matrix
/// `layer` and the rows of matrix `layer + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IsoTransform {
    /// New neuron `j` is old neuron `permutation[j]`.
    Permute {
        layer: usize,
        permutation: Vec<usize>,
    },
    Scale {
        layer: usize,
        neuron: usize,
        factor: f32,
    },
    Polarity {
        layer: usize,
        neuron: usize,
    },
}

impl IsoTransform {
    pub fn inverse(&self) -> IsoTransform {
        match self {
            IsoTransform::Permute { layer, permutation } => {
                let mut inv = vec![0; permutation.len()];
                for (new, &old) in permutation.iter().enumerate() {
                    inv[old] = new;
                }
                IsoTransform::Permute {
                    layer: *layer,
                    permutation: inv,
                }
            }
            IsoTransform::Scale {
                layer,
                neuron,
                factor,
            } => IsoTransform::Scale {
                layer: *layer,
                neuron: *neuron,
                factor: 1.0 / factor,
            },
            t @ IsoTransform::Polarity { .. } => t.clone(),
        }
    }
}

fn hidden_width(params: &MlpParams, layer: usize) -> Result<usize> {
    let spec = params.spec();
    if layer + 1 >= spec.num_layers() {
        return Err(Error::InvalidTransform(format!(
            "layer {layer} is not a hidden layer of a {}-matrix network",
            spec.num_layers()
        )));
    }
    Ok(spec.widths()[layer + 1])
}

fn scale_neuron(params: &mut MlpParams, layer: usize, neuron: usize, factor: f32) {
    params.weights_mut()[layer]
        .column_mut(neuron)
        .mapv_inplace(|v| v * factor);
    params.biases_mut()[layer][neuron] *= factor;
    params.weights_mut()[layer + 1]
        .row_mut(neuron)
        .mapv_inplace(|v| v / factor);
}

fn flip_neuron(params: &mut MlpParams, layer: usize, neuron: usize) {
    params.weights_mut()[layer]
        .column_mut(neuron)
        .mapv_inplace(|v| -v);
    params.biases_mut()[layer][neuron] = -params.biases()[layer][neuron];
    params.weights_mut()[layer + 1]
        .row_mut(neuron)
        .mapv_inplace(|v| -v);
}

fn permute_layer(params: &mut MlpParams, layer: usize, permutation: &[usize]) {
    let w = params.weights()[layer].select(Axis(1), permutation);
    let b = params.biases()[layer].select(Axis(0), permutation);
    let next = params.weights()[layer + 1].select(Axis(0), permutation);
    params.weights_mut()[layer] = w;
    params.biases_mut()[layer] = b;
    params.weights_mut()[layer + 1] = next;
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    p.iter()
        .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

/// Applies one isomorphism. Scaling needs a piecewise-linear activation and
/// polarity an odd one.
pub fn apply_transform(params: &MlpParams, t: &IsoTransform) -> Result<MlpParams> {
    let act = params.spec().activation();
    let mut out = params.clone();
    match t {
        IsoTransform::Permute { layer, permutation } => {
            let n = hidden_width(params, *layer)?;
            if !is_permutation(permutation, n) {
                return Err(Error::InvalidTransform(format!(
                    "{permutation:?} is not a permutation of {n} neurons"
                )));
            }
            permute_layer(&mut out, *layer, permutation);
        }
        IsoTransform::Scale {
            layer,
            neuron,
            factor,
        } => {
            let n = hidden_width(params, *layer)?;
            if !act.is_piecewise_linear() {
                return Err(Error::InvalidTransform(format!(
                    "scaling is not an isomorphism for {act:?}"
                )));
            }
            if *neuron >= n {
                return Err(Error::InvalidTransform(format!(
                    "neuron {neuron} out of range for width {n}"
                )));
            }
            if !(*factor > 0.0 && factor.is_finite()) {
                return Err(Error::InvalidTransform(format!(
                    "scale factor must be positive and finite, got {factor}"
                )));
            }
            scale_neuron(&mut out, *layer, *neuron, *factor);
        }
        IsoTransform::Polarity { layer, neuron } => {
            let n = hidden_width(params, *layer)?;
            if !act.is_odd() {
                return Err(Error::InvalidTransform(format!(
                    "polarity is not an isomorphism for {act:?}"
                )));
            }
            if *neuron >= n {
                return Err(Error::InvalidTransform(format!(
                    "neuron {neuron} out of range for width {n}"
                )));
            }
            flip_neuron(&mut out, *layer, *neuron);
        }
    }
    Ok(out)
}

/// Applies a sequence of transforms in order.
pub fn apply_all(params: &MlpParams, ts: &[IsoTransform]) -> Result<MlpParams> {
    ts.iter()
        .try_fold(params.clone(), |p, t| apply_transform(&p, t))
}

/// Extended column `j` of matrix `layer`: incoming weights followed by the bias.
fn extended_column(params: &MlpParams, layer: usize, j: usize) -> impl Iterator<Item = f32> + '_ {
    params.weights()[layer]
        .column(j)
        .into_iter()
        .copied()
        .chain(std::iter::once(params.biases()[layer][j]))
}

/// Steps (1) unit L2 norm (piecewise-linear only) and (2) positive sum (odd
/// activations only) over every hidden layer, returning the normalized network
/// and the transforms that produced it.
pub fn normalize_gauge(params: &MlpParams) -> Result<(MlpParams, Vec<IsoTransform>)> {
    let act = params.spec().activation();
    let hidden = params.spec().num_layers() - 1;
    let mut out = params.clone();
    let mut applied = Vec::new();
    if act.is_piecewise_linear() {
        for layer in 0..hidden {
            for j in 0..params.spec().widths()[layer + 1] {
                let norm = extended_column(&out, layer, j)
                    .map(|v| (v as f64).powi(2))
                    .sum::<f64>()
                    .sqrt() as f32;
                if !(norm > ZERO_NORM) {
                    return Err(Error::ZeroColumn { layer, column: j });
                }
                // Already unit within rounding: rescaling would only add drift.
                if (norm - 1.0).abs() <= UNIT_TOLERANCE {
                    continue;
                }
                let factor = 1.0 / norm;
                scale_neuron(&mut out, layer, j, factor);
                applied.push(IsoTransform::Scale {
                    layer,
                    neuron: j,
                    factor,
                });
            }
        }
    }
    if act.is_odd() {
        for layer in 0..hidden {
            for j in 0..params.spec().widths()[layer + 1] {
                let sum: f64 = extended_column(&out, layer, j).map(|v| v as f64).sum();
                if sum < 0.0 {
                    flip_neuron(&mut out, layer, j);
                    applied.push(IsoTransform::Polarity { layer, neuron: j });
                }
            }
        }
    }
    Ok((out, applied))
}

/// Canonical representative of the isomorphism class: unit-norm columns
/// (piecewise-linear), positive column sums (odd activations), then columns
/// sorted by ascending L1 norm. The output matrix is never touched.
pub fn canonicalize(params: &MlpParams) -> Result<MlpParams> {
    let (mut out, _) = normalize_gauge(params)?;
    for layer in 0..params.spec().num_layers() - 1 {
        let n = params.spec().widths()[layer + 1];
        let l1: Vec<f64> = (0..n)
            .map(|j| {
                extended_column(&out, layer, j)
                    .map(|v| (v as f64).abs())
                    .sum()
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| l1[a].total_cmp(&l1[b]).then(a.cmp(&b)));
        permute_layer(&mut out, layer, &order);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct PairKey {
    cost: f64,
    r: usize,
    c: usize,
}

impl PairKey {
    fn new(cost: f64, r: usize, c: usize) -> Self {
        Self { cost, r, c }
    }
}

impl PartialEq for PairKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for PairKey {}

impl PartialOrd for PairKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PairKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.r.cmp(&other.r))
            .then(self.c.cmp(&other.c))
    }
}

/// Greedy pairing of candidate columns to reference columns: repeatedly take the
/// globally closest unpaired pair by L1 distance, ties broken by the lowest
/// reference index, then the lowest candidate index. Returns `perm` with
/// `perm[reference_index] = candidate_index`.
pub fn greedy_match(candidate: ArrayView2<f32>, reference: ArrayView2<f32>) -> Result<Vec<usize>> {
    if candidate.dim() != reference.dim() {
        return Err(Error::SpecMismatch(format!(
            "cannot match {:?} columns against {:?}",
            candidate.dim(),
            reference.dim()
        )));
    }
    let n = reference.ncols();
    // Each reference column keeps its candidates sorted by (cost, index); a heap
    // over the row heads then yields pairs in global (cost, reference,
    // candidate) order, skipping candidates that are already taken.
    let mut rows: Vec<Vec<(f64, usize)>> = Vec::with_capacity(n);
    for r in 0..n {
        let rc = reference.column(r);
        let mut row: Vec<(f64, usize)> = (0..n)
            .map(|c| {
                let cost = candidate
                    .column(c)
                    .iter()
                    .zip(rc.iter())
                    .map(|(a, b)| (*a as f64 - *b as f64).abs())
                    .sum();
                (cost, c)
            })
            .collect();
        row.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        rows.push(row);
    }
    let mut heads = vec![0usize; n];
    let mut heap: BinaryHeap<Reverse<PairKey>> = (0..n)
        .map(|r| Reverse(PairKey::new(rows[r][0].0, r, rows[r][0].1)))
        .collect();
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    while let Some(Reverse(PairKey { r, c, .. })) = heap.pop() {
        if used[c] {
            heads[r] += 1;
            let (cost, next) = rows[r][heads[r]];
            heap.push(Reverse(PairKey::new(cost, r, next)));
            continue;
        }
        perm[r] = c;
        used[c] = true;
    }
    Ok(perm)
}

/// Matrix whose columns are the extended columns of hidden layer `layer`.
pub fn extended_columns(params: &MlpParams, layer: usize) -> Array2<f32> {
    let w = &params.weights()[layer];
    let mut out = Array2::zeros((w.nrows() + 1, w.ncols()));
    out.slice_mut(ndarray::s![..w.nrows(), ..]).assign(w);
    out.row_mut(w.nrows()).assign(&params.biases()[layer]);
    out
}

/// Result of [`greedy_align_detailed`].
#[derive(Debug, Clone)]
pub struct Alignment {
    /// Candidate re-expressed in the reference's neuron order, scale and sign.
    pub aligned: MlpParams,
    /// Per hidden layer, `perm[reference_neuron] = candidate_neuron`.
    pub permutations: Vec<Vec<usize>>,
    /// Per hidden layer, total L1 matching cost in the normalized gauge.
    pub matching_costs: Vec<f64>,
}

/// Applies the matched permutations to the original candidate and rescales or
/// flips each neuron so its extended column has the reference neuron's norm and
/// sign. Layers are processed in order, so every layer is compared in the gauge
/// already fixed for the layers before it.
fn into_reference_gauge(
    candidate: &MlpParams,
    reference: &MlpParams,
    permutations: &[Vec<usize>],
) -> Result<MlpParams> {
    let act = candidate.spec().activation();
    let mut out = candidate.clone();
    for (layer, perm) in permutations.iter().enumerate() {
        permute_layer(&mut out, layer, perm);
        for j in 0..perm.len() {
            if act.is_piecewise_linear() {
                let norm = |p: &MlpParams| {
                    extended_column(p, layer, j)
                        .map(|v| (v as f64).powi(2))
                        .sum::<f64>()
                        .sqrt()
                };
                let (nc, nr) = (norm(&out), norm(reference));
                if !(nc > ZERO_NORM as f64) {
                    return Err(Error::ZeroColumn { layer, column: j });
                }
                let factor = (nr / nc) as f32;
                if factor != 1.0 && factor > 0.0 {
                    scale_neuron(&mut out, layer, j, factor);
                }
            }
            if act.is_odd() {
                let positive = |p: &MlpParams| {
                    extended_column(p, layer, j).map(|v| v as f64).sum::<f64>() >= 0.0
                };
                if positive(&out) != positive(reference) {
                    flip_neuron(&mut out, layer, j);
                }
            }
        }
    }
    Ok(out)
}

/// Aligns `candidate` to `reference`: both are brought to the normalized gauge,
/// candidate columns are greedily matched layer by layer, and the permuted
/// candidate is mapped back into the reference's own gauge so that the two can
/// be compared entry by entry. The reference is only read.
pub fn greedy_align_detailed(candidate: &MlpParams, reference: &MlpParams) -> Result<Alignment> {
    if candidate.spec() != reference.spec() {
        return Err(Error::SpecMismatch(format!(
            "candidate {:?} vs reference {:?}",
            candidate.spec(),
            reference.spec()
        )));
    }
    let (mut cand, _) = normalize_gauge(candidate)?;
    let (ref_norm, _) = normalize_gauge(reference)?;
    let mut permutations = Vec::new();
    let mut matching_costs = Vec::new();
    for layer in 0..reference.spec().num_layers() - 1 {
        let rc = extended_columns(&ref_norm, layer);
        let cc = extended_columns(&cand, layer);
        let perm = greedy_match(cc.view(), rc.view())?;
        permute_layer(&mut cand, layer, &perm);
        let cost = extended_columns(&cand, layer)
            .iter()
            .zip(rc.iter())
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        matching_costs.push(cost);
        permutations.push(perm);
    }
    let aligned = into_reference_gauge(candidate, reference, &permutations)?;
    Ok(Alignment {
        aligned,
        permutations,
        matching_costs,
    })
}

/// [`greedy_align_detailed`] without the bookkeeping.
pub fn greedy_align(candidate: &MlpParams, reference: &MlpParams) -> Result<MlpParams> {
    Ok(greedy_align_detailed(candidate, reference)?.aligned)
}

/// Parameter-space and functional error of an aligned candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// Largest absolute difference over all weights and biases.
    pub max_eps: f64,
    /// `100 * max_eps / mean(|reference parameter|)`.
    pub max_eps_pct: f64,
    /// Mean absolute difference per weight matrix.
    pub mean_eps_per_matrix: Vec<f64>,
    /// Mean absolute difference per bias vector.
    pub mean_eps_per_bias: Vec<f64>,
    /// Sum over weight matrices of the Frobenius distance.
    pub l2_total: f64,
    /// Mean absolute reference parameter used as the percentage basis.
    pub reference_mean_abs: f64,
    /// Which parameters the percentage basis was computed from.
    pub reference_basis: String,
    /// Per hidden layer, `perm[reference_neuron] = candidate_neuron`, when known.
    pub permutations: Option<Vec<Vec<usize>>>,
    /// Fraction of probe rows where both networks pick the same argmax output.
    pub agreement_rate: f64,
    pub probe_count: usize,
    /// Largest absolute output difference over the probes.
    pub max_output_diff: f64,
}

pub const REFERENCE_BASIS: &str = "reference parameters in their original gauge";

/// Metrics between an already aligned candidate and the reference.
pub fn compare(
    candidate: &MlpParams,
    reference: &MlpParams,
    probes: ArrayView2<f32>,
) -> Result<AlignmentReport> {
    if candidate.spec() != reference.spec() {
        return Err(Error::SpecMismatch(format!(
            "candidate {:?} vs reference {:?}",
            candidate.spec(),
            reference.spec()
        )));
    }
    let mut max_eps = 0.0f64;
    let mut mean_eps_per_matrix = Vec::new();
    let mut mean_eps_per_bias = Vec::new();
    let mut l2_total = 0.0f64;
    for (cw, rw) in candidate.weights().iter().zip(reference.weights()) {
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for (a, b) in cw.iter().zip(rw.iter()) {
            let d = (*a as f64 - *b as f64).abs();
            max_eps = max_eps.max(d);
            sum += d;
            sq += d * d;
        }
        mean_eps_per_matrix.push(sum / cw.len() as f64);
        l2_total += sq.sqrt();
    }
    for (cb, rb) in candidate.biases().iter().zip(reference.biases()) {
        let mut sum = 0.0f64;
        for (a, b) in cb.iter().zip(rb.iter()) {
            let d = (*a as f64 - *b as f64).abs();
            max_eps = max_eps.max(d);
            sum += d;
        }
        mean_eps_per_bias.push(sum / cb.len() as f64);
    }
    let flat = reference.to_flat();
    let reference_mean_abs = flat.iter().map(|v| v.abs() as f64).sum::<f64>() / flat.len() as f64;
    let max_eps_pct = if reference_mean_abs > 0.0 {
        100.0 * max_eps / reference_mean_abs
    } else if max_eps == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };

    let (agreement_rate, max_output_diff) = if probes.nrows() == 0 {
        (1.0, 0.0)
    } else {
        let a = forward(candidate, probes)?;
        let b = forward(reference, probes)?;
        let agree = a
            .axis_iter(Axis(0))
            .zip(b.axis_iter(Axis(0)))
            .filter(|(x, y)| argmax(x.iter().copied()) == argmax(y.iter().copied()))
            .count();
        let diff = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (*x as f64 - *y as f64).abs())
            .fold(0.0, f64::max);
        (agree as f64 / probes.nrows() as f64, diff)
    };

    Ok(AlignmentReport {
        max_eps,
        max_eps_pct,
        mean_eps_per_matrix,
        mean_eps_per_bias,
        l2_total,
        reference_mean_abs,
        reference_basis: REFERENCE_BASIS.into(),
        permutations: None,
        agreement_rate,
        probe_count: probes.nrows(),
        max_output_diff,
    })
}

/// Greedy alignment followed by [`compare`], with the permutations recorded.
pub fn align_and_compare(
    candidate: &MlpParams,
    reference: &MlpParams,
    probes: ArrayView2<f32>,
) -> Result<AlignmentReport> {
    let alignment = greedy_align_detailed(candidate, reference)?;
    let mut report = compare(&alignment.aligned, reference, probes)?;
    report.permutations = Some(alignment.permutations);
    Ok(report)
}

/// Final evaluation of a reconstruction against the oracle's hidden network.
/// This is the only place the hidden parameters are read.
pub fn evaluate_against_oracle(
    oracle: &QueryOracle,
    candidate: &MlpParams,
    probes: ArrayView2<f32>,
) -> Result<AlignmentReport> {
    let key = EvaluationKey { _private: () };
    align_and_compare(candidate, oracle.unseal(&key), probes)
}

/// Sum of per-matrix L2 distances between the canonical forms.
pub fn canonical_distance(a: &MlpParams, b: &MlpParams) -> Result<f64> {
    if a.spec() != b.spec() {
        return Err(Error::SpecMismatch(
            "canonical distance across architectures".into(),
        ));
    }
    let (ca, cb) = (canonicalize(a)?, canonicalize(b)?);
    Ok(ca
        .weights()
        .iter()
        .zip(cb.weights())
        .map(|(x, y)| {
            x.iter()
                .zip(y.iter())
                .map(|(p, q)| (*p as f64 - *q as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_glorot, Activation, MlpSpec};
    use ndarray::{array, Array1};

    fn net(widths: &[usize], act: Activation, seed: u64) -> MlpParams {
        init_glorot(&MlpSpec::new(widths.to_vec(), act).unwrap(), seed)
    }

    #[test]
    fn identity_permutation_is_noop() {
        let p = net(&[4, 3, 2], Activation::default(), 1);
        let t = IsoTransform::Permute {
            layer: 0,
            permutation: vec![0, 1, 2],
        };
        assert_eq!(apply_transform(&p, &t).unwrap(), p);
    }

    #[test]
    fn scale_matches_displayed_pattern() {
        let spec = MlpSpec::new(vec![4, 3, 2], Activation::default()).unwrap();
        let w0 = Array2::from_shape_fn((4, 3), |(i, j)| (10 * (i + 1) + j + 1) as f32);
        let w1 = Array2::from_shape_fn((3, 2), |(i, j)| (10 * (i + 1) + j + 1) as f32);
        let p = MlpParams::from_parts(
            spec,
            vec![w0.clone(), w1.clone()],
            vec![Array1::zeros(3), Array1::zeros(2)],
        )
        .unwrap();
        let alpha = 2.0f32;
        let q = apply_transform(
            &p,
            &IsoTransform::Scale {
                layer: 0,
                neuron: 0,
                factor: alpha,
            },
        )
        .unwrap();
        for i in 0..4 {
            assert_eq!(q.weights()[0][[i, 0]], alpha * w0[[i, 0]]);
            assert_eq!(q.weights()[0][[i, 1]], w0[[i, 1]]);
        }
        assert_eq!(q.weights()[1][[0, 0]], w1[[0, 0]] / alpha);
        assert_eq!(q.weights()[1][[0, 1]], w1[[0, 1]] / alpha);
        assert_eq!(q.weights()[1][[1, 0]], w1[[1, 0]]);
    }

    #[test]
    fn invalid_transforms_rejected() {
        let leaky = net(&[3, 2, 2], Activation::default(), 0);
        let tanh = net(&[3, 2, 2], Activation::Tanh, 0);
        let bad = [
            (
                &leaky,
                IsoTransform::Polarity {
                    layer: 0,
                    neuron: 0,
                },
            ),
            (
                &tanh,
                IsoTransform::Scale {
                    layer: 0,
                    neuron: 0,
                    factor: 2.0,
                },
            ),
            (
                &leaky,
                IsoTransform::Scale {
                    layer: 0,
                    neuron: 0,
                    factor: 0.0,
                },
            ),
            (
                &leaky,
                IsoTransform::Scale {
                    layer: 0,
                    neuron: 5,
                    factor: 1.0,
                },
            ),
            (
                &leaky,
                IsoTransform::Scale {
                    layer: 1,
                    neuron: 0,
                    factor: 1.0,
                },
            ),
            (
                &leaky,
                IsoTransform::Permute {
                    layer: 0,
                    permutation: vec![0, 0],
                },
            ),
        ];
        for (p, t) in bad {
            assert!(
                matches!(apply_transform(p, &t), Err(Error::InvalidTransform(_))),
                "{t:?}"
            );
        }
    }

    #[test]
    fn canonical_unit_column() {
        let spec = MlpSpec::new(vec![2, 1, 1], Activation::default()).unwrap();
        let p = MlpParams::from_parts(
            spec,
            vec![array![[3.0f32], [4.0]], array![[2.0f32]]],
            vec![array![0.0f32], array![0.5f32]],
        )
        .unwrap();
        let c = canonicalize(&p).unwrap();
        assert!((c.weights()[0][[0, 0]] - 0.6).abs() < 1e-7);
        assert!((c.weights()[0][[1, 0]] - 0.8).abs() < 1e-7);
        assert!((c.weights()[1][[0, 0]] - 10.0).abs() < 1e-6);
        assert_eq!(c.biases()[1][0], 0.5);
    }

    #[test]
    fn zero_column_is_reported() {
        let spec = MlpSpec::new(vec![2, 2, 1], Activation::Relu).unwrap();
        let mut flat = init_glorot(&spec, 0).to_flat();
        // Column 1 of the first matrix and its bias.
        flat[1] = 0.0;
        flat[3] = 0.0;
        flat[5] = 0.0;
        let p = MlpParams::from_flat(&spec, &flat).unwrap();
        assert!(matches!(
            canonicalize(&p),
            Err(Error::ZeroColumn {
                layer: 0,
                column: 1
            })
        ));
    }

    #[test]
    fn canonicalize_is_idempotent() {
        for act in [Activation::default(), Activation::Relu, Activation::Tanh] {
            let p = net(&[6, 5, 4, 3], act, 4);
            let once = canonicalize(&p).unwrap();
            let twice = canonicalize(&once).unwrap();
            assert!(once.max_abs_diff(&twice).unwrap() <= 1e-7);
        }
    }

    #[test]
    fn swapped_neurons_are_recovered() {
        let p = net(&[5, 4, 3], Activation::default(), 2);
        let swapped = apply_transform(
            &p,
            &IsoTransform::Permute {
                layer: 0,
                permutation: vec![1, 0, 2, 3],
            },
        )
        .unwrap();
        let a = greedy_align_detailed(&swapped, &p).unwrap();
        assert_eq!(a.permutations[0], vec![1, 0, 2, 3]);
        assert!(a.aligned.max_abs_diff(&p).unwrap() <= 1e-6);
    }

    #[test]
    fn ties_take_lowest_indices() {
        let zeros = Array2::<f32>::zeros((3, 3));
        assert_eq!(
            greedy_match(zeros.view(), zeros.view()).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn compare_self_is_zero() {
        let p = net(&[4, 6, 3], Activation::default(), 8);
        let probes =
            Array2::from_shape_fn((50, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 5.0 - 1.0);
        let r = align_and_compare(&p, &p, probes.view()).unwrap();
        assert_eq!(r.max_eps, 0.0);
        assert_eq!(r.max_eps_pct, 0.0);
        assert!(r.mean_eps_per_matrix.iter().all(|&v| v == 0.0));
        assert_eq!(r.l2_total, 0.0);
        assert_eq!(r.agreement_rate, 1.0);
    }

    #[test]
    fn spec_mismatch() {
        let a = net(&[4, 6, 3], Activation::default(), 8);
        let b = net(&[4, 5, 3], Activation::default(), 8);
        assert!(matches!(greedy_align(&a, &b), Err(Error::SpecMismatch(_))));
        assert!(matches!(
            compare(&a, &b, Array2::zeros((0, 4)).view()),
            Err(Error::SpecMismatch(_))
        ));
    }
}
