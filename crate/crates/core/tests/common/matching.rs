//! Exhaustive permutation search as an oracle for greedy matching.

use neurome::align::{apply_all, greedy_align_detailed};
use neurome::nn::{init_glorot, Activation, MlpParams, MlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{random_transforms, ACTIVATIONS};

/// Extended columns (weights plus bias) of hidden layer 0, normalized the way
/// the activation allows: unit L2 norm for piecewise-linear, positive sum for odd.
pub fn normalized_columns(p: &MlpParams) -> Vec<Vec<f64>> {
    let act = p.spec().activation();
    let w = &p.weights()[0];
    let b = &p.biases()[0];
    (0..w.ncols())
        .map(|j| {
            let mut c: Vec<f64> = w.column(j).iter().map(|v| *v as f64).collect();
            c.push(b[j] as f64);
            if act.is_piecewise_linear() {
                let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                c.iter_mut().for_each(|v| *v /= n);
            }
            if act.is_odd() && c.iter().sum::<f64>() < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            c
        })
        .collect()
}

pub fn cost(cand: &[Vec<f64>], reference: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(r, &c)| {
            cand[c]
                .iter()
                .zip(&reference[r])
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .sum()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Optimal assignment by enumeration: `perm[reference] = candidate`.
pub fn brute_force(cand: &[Vec<f64>], reference: &[Vec<f64>]) -> (Vec<usize>, f64) {
    permutations(cand.len())
        .into_iter()
        .map(|p| {
            let c = cost(cand, reference, &p);
            (p, c)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// A reference net and a permuted (and scaled/flipped) copy whose parameters
/// were perturbed by at most `noise` before the permutation.
pub fn near_pair(act: Activation, width: usize, noise: f32, seed: u64) -> (MlpParams, MlpParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = MlpSpec::new(
        vec![rng.random_range(2..=6), width, rng.random_range(2..=4)],
        act,
    )
    .unwrap();
    let reference = init_glorot(&spec, rng.random());
    let jitter = Normal::new(0.0f32, noise / 3.0).unwrap();
    let flat: Vec<f32> = reference
        .to_flat()
        .iter()
        .map(|v| v + jitter.sample(&mut rng).clamp(-noise, noise))
        .collect();
    let perturbed = MlpParams::from_flat(&spec, &flat).unwrap();
    let ts = random_transforms(&perturbed, 4, rng.random());
    (apply_all(&perturbed, &ts).unwrap(), reference)
}

/// Runs `pairs` near-identical trials; returns how many greedy matchings equal
/// the exhaustive optimum.
pub fn greedy_equals_brute_force(pairs: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut equal = 0;
    for i in 0..pairs {
        let act = ACTIVATIONS[i % 3];
        let width = rng.random_range(2..=5);
        let (cand, reference) = near_pair(act, width, 1e-3, rng.random());
        let (cc, rc) = (normalized_columns(&cand), normalized_columns(&reference));
        let (best, best_cost) = brute_force(&cc, &rc);
        let greedy = greedy_align_detailed(&cand, &reference)
            .unwrap()
            .permutations[0]
            .clone();
        if greedy == best || (cost(&cc, &rc, &greedy) - best_cost).abs() <= 1e-12 {
            equal += 1;
        }
    }
    equal
}
