//! Finite-difference trials for the backward passes. Each trial builds a
//! random instance, compares the analytic gradient with a central difference
//! of an independent f64 forward, and skips coordinates where a kink
//! (activation or absolute value) changes side within ±h.

use ndarray::Array2;
use neurome::nn::{backward, init_glorot, Activation, MlpParams, MlpSpec};
use neurome::sampling::disagreement_input_grad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ref_disagreement, rel_err, RefNet};

pub const H: f64 = 1e-3;
/// Below this magnitude errors are measured absolutely.
pub const FLOOR: f64 = 1e-3;

pub const PARAM_TRIALS: usize = 400;
pub const INPUT_TRIALS: usize = 300;
pub const DISAGREEMENT_TRIALS: usize = 300;

pub fn random_activation(rng: &mut ChaCha8Rng) -> Activation {
    match rng.random_range(0..3) {
        0 => Activation::default(),
        1 => Activation::Relu,
        _ => Activation::Tanh,
    }
}

pub fn random_net(rng: &mut ChaCha8Rng) -> MlpParams {
    let depth = rng.random_range(1..=2);
    let mut widths = vec![rng.random_range(2..=5)];
    for _ in 0..depth {
        widths.push(rng.random_range(2..=5));
    }
    widths.push(rng.random_range(2..=4));
    let spec = MlpSpec::new(widths, random_activation(rng)).unwrap();
    init_glorot(&spec, rng.random())
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f32> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn weighted_output(net: &RefNet, x: &Array2<f32>, up: &Array2<f32>) -> (f64, Vec<bool>) {
    let mut total = 0.0;
    let mut signs = Vec::new();
    for (r, row) in x.rows().into_iter().enumerate() {
        let xr: Vec<f64> = row.iter().map(|v| *v as f64).collect();
        let (y, s) = net.forward_row(&xr);
        signs.extend(s);
        total += y
            .iter()
            .enumerate()
            .map(|(k, v)| v * up[[r, k]] as f64)
            .sum::<f64>();
    }
    (total, signs)
}

/// Central difference of `f` at `v`, or `None` when a kink lies in between.
pub fn central<F: FnMut(f64) -> (f64, Vec<bool>)>(v: f64, mut f: F) -> Option<f64> {
    let (plus, sp) = f(v + H);
    let (minus, sm) = f(v - H);
    let (_, s0) = f(v);
    (sp == sm && sp == s0).then(|| (plus - minus) / (2.0 * H))
}

pub struct Tally {
    checked: usize,
    skipped: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self {
            checked: 0,
            skipped: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, analytic: f32, numeric: Option<f64>) {
        match numeric {
            Some(n) => {
                self.checked += 1;
                self.worst = self.worst.max(rel_err(analytic as f64, n, FLOOR));
            }
            None => self.skipped += 1,
        }
    }
}

pub fn parameter_gradient_trials(trials: usize, seed: u64) -> (usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new();
    for _ in 0..trials {
        let params = random_net(&mut rng);
        let batch = rng.random_range(1..=4);
        let x = normal_matrix(&mut rng, batch, params.spec().input_dim());
        let up = normal_matrix(&mut rng, batch, params.spec().output_dim());
        let g = backward(&params, x.view(), up.view()).unwrap();
        let base = RefNet::from_params(&params);
        for l in 0..base.w.len() {
            for i in 0..base.w[l].len() {
                for j in 0..base.w[l][i].len() {
                    let fd = central(base.w[l][i][j], |v| {
                        let mut n = base.clone();
                        n.w[l][i][j] = v;
                        weighted_output(&n, &x, &up)
                    });
                    tally.record(g.d_weights[l][[i, j]], fd);
                }
            }
            for j in 0..base.b[l].len() {
                let fd = central(base.b[l][j], |v| {
                    let mut n = base.clone();
                    n.b[l][j] = v;
                    weighted_output(&n, &x, &up)
                });
                tally.record(g.d_biases[l][j], fd);
            }
        }
    }
    (tally.checked, tally.skipped, tally.worst)
}

pub fn input_gradient_trials(trials: usize, seed: u64) -> (usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new();
    for _ in 0..trials {
        let params = random_net(&mut rng);
        let batch = rng.random_range(1..=4);
        let x = normal_matrix(&mut rng, batch, params.spec().input_dim());
        let up = normal_matrix(&mut rng, batch, params.spec().output_dim());
        let g = backward(&params, x.view(), up.view()).unwrap();
        let net = RefNet::from_params(&params);
        for r in 0..batch {
            for c in 0..x.ncols() {
                let row: Vec<f64> = x.row(r).iter().map(|v| *v as f64).collect();
                let fd = central(row[c], |v| {
                    let mut xr = row.clone();
                    xr[c] = v;
                    let (y, s) = net.forward_row(&xr);
                    (
                        y.iter()
                            .enumerate()
                            .map(|(k, o)| o * up[[r, k]] as f64)
                            .sum(),
                        s,
                    )
                });
                tally.record(g.d_inputs[[r, c]], fd);
            }
        }
    }
    (tally.checked, tally.skipped, tally.worst)
}

pub fn disagreement_gradient_trials(trials: usize, seed: u64) -> (usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new();
    for _ in 0..trials {
        let act = if rng.random_bool(0.5) {
            Activation::default()
        } else {
            Activation::Tanh
        };
        let spec = MlpSpec::new(vec![4, 3, 2], act).unwrap();
        let pop: Vec<MlpParams> = (0..3).map(|_| init_glorot(&spec, rng.random())).collect();
        let batch = rng.random_range(1..=3);
        let x = normal_matrix(&mut rng, batch, 4);
        let (_, g) = disagreement_input_grad(&pop, x.view()).unwrap();
        let nets: Vec<RefNet> = pop.iter().map(RefNet::from_params).collect();
        let rows: Vec<Vec<f64>> = x
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| *v as f64).collect())
            .collect();
        for r in 0..batch {
            for c in 0..4 {
                let fd = central(rows[r][c], |v| {
                    let mut rs = rows.clone();
                    rs[r][c] = v;
                    ref_disagreement(&nets, &rs)
                });
                match fd {
                    Some(n) => {
                        tally.checked += 1;
                        tally.worst = tally.worst.max(rel_err(g[[r, c]] as f64, n, FLOOR));
                    }
                    None => tally.skipped += 1,
                }
            }
        }
    }
    (tally.checked, tally.skipped, tally.worst)
}
