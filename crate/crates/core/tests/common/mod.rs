//! Independent double-precision reference implementations used as test oracles.
#![allow(dead_code)]

use ndarray::Array2;
use neurome::align::IsoTransform;
use neurome::nn::{forward, init_glorot, Activation, MlpParams, MlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub mod gradcheck;
pub mod matching;

/// Plain-loop f64 copy of a network: `w[l][i][j]` is input `i` to neuron `j`.
#[derive(Clone, Debug)]
pub struct RefNet {
    pub w: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
    pub act: Activation,
}

impl RefNet {
    pub fn from_params(p: &MlpParams) -> Self {
        let w = p
            .weights()
            .iter()
            .map(|m| {
                (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| m[[i, j]] as f64).collect())
                    .collect()
            })
            .collect();
        let b = p
            .biases()
            .iter()
            .map(|v| v.iter().map(|x| *x as f64).collect())
            .collect();
        Self {
            w,
            b,
            act: p.spec().activation(),
        }
    }

    fn act(&self, z: f64) -> f64 {
        match self.act {
            Activation::LeakyRelu { slope } => {
                if z >= 0.0 {
                    z
                } else {
                    slope as f64 * z
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn has_kinks(&self) -> bool {
        !matches!(self.act, Activation::Tanh)
    }

    /// Output for one input row, plus the sign of every hidden pre-activation
    /// (empty for smooth activations).
    pub fn forward_row(&self, x: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let mut h = x.to_vec();
        let mut signs = Vec::new();
        let n = self.w.len();
        for l in 0..n {
            let out_dim = self.b[l].len();
            let mut z = self.b[l].clone();
            for (i, hi) in h.iter().enumerate() {
                for j in 0..out_dim {
                    z[j] += hi * self.w[l][i][j];
                }
            }
            if l + 1 < n {
                if self.has_kinks() {
                    signs.extend(z.iter().map(|v| *v >= 0.0));
                }
                h = z.iter().map(|v| self.act(*v)).collect();
            } else {
                h = z;
            }
        }
        (h, signs)
    }
}

/// Disagreement loss over a batch with a reference forward, plus every sign
/// that decides which smooth piece the loss is on.
pub fn ref_disagreement(nets: &[RefNet], rows: &[Vec<f64>]) -> (f64, Vec<bool>) {
    let p = nets.len() as f64;
    let mut total = 0.0;
    let mut signs = Vec::new();
    for x in rows {
        let mut normed = Vec::new();
        for net in nets {
            let (y, s) = net.forward_row(x);
            signs.extend(s);
            signs.extend(y.iter().map(|v| *v >= 0.0));
            let l1: f64 = y.iter().map(|v| v.abs()).sum();
            normed.push(if l1 > 1e-12 {
                y.iter().map(|v| v / l1).collect::<Vec<_>>()
            } else {
                vec![0.0; y.len()]
            });
        }
        let mut d = 0.0;
        for a in &normed {
            for b in &normed {
                for (u, v) in a.iter().zip(b) {
                    d += (u - v).abs();
                    signs.push(u - v >= 0.0);
                }
            }
        }
        total += d / (p * p);
    }
    (-total / rows.len() as f64, signs)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random network with 1 to 3 hidden layers of width 2 to 6.
pub fn random_net(act: Activation, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(2..=6)];
    for _ in 0..hidden {
        widths.push(rng.random_range(2..=6));
    }
    widths.push(rng.random_range(2..=4));
    init_glorot(&MlpSpec::new(widths, act).unwrap(), rng.random())
}

/// A random sequence of transforms that are valid for `params`' activation.
pub fn random_transforms(params: &MlpParams, len: usize, seed: u64) -> Vec<IsoTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = params.spec();
    let act = spec.activation();
    let hidden = spec.num_layers() - 1;
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let layer = rng.random_range(0..hidden);
        let width = spec.widths()[layer + 1];
        let neuron = rng.random_range(0..width);
        match rng.random_range(0..3) {
            0 => {
                let mut permutation: Vec<usize> = (0..width).collect();
                for i in (1..width).rev() {
                    permutation.swap(i, rng.random_range(0..=i));
                }
                out.push(IsoTransform::Permute { layer, permutation });
            }
            1 if act.is_piecewise_linear() => out.push(IsoTransform::Scale {
                layer,
                neuron,
                factor: rng.random_range(0.2f32..5.0),
            }),
            2 if act.is_odd() => out.push(IsoTransform::Polarity { layer, neuron }),
            _ => {}
        }
    }
    out
}

pub fn gaussian_inputs(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

/// Largest output difference relative to the largest reference output.
pub fn relative_output_diff(a: &MlpParams, b: &MlpParams, x: &Array2<f32>) -> f64 {
    let ya = forward(a, x.view()).unwrap();
    let yb = forward(b, x.view()).unwrap();
    let scale = yb
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs() as f64))
        .max(1e-12);
    ya.iter()
        .zip(yb.iter())
        .map(|(p, q)| (*p as f64 - *q as f64).abs())
        .fold(0.0, f64::max)
        / scale
}

pub const ACTIVATIONS: [Activation; 3] = [
    Activation::LeakyRelu { slope: 0.01 },
    Activation::Relu,
    Activation::Tanh,
];
