//! Fixed-topology multilayer perceptrons.
//!
//! Weight matrix `i` has shape `(widths[i], widths[i + 1])`: column `j` holds the
//! incoming weights of neuron `j` in layer `i + 1`, so neuron isomorphisms act on
//! columns of one matrix and the matching rows of the next. Hidden layers apply
//! the activation, the output layer is affine.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub const DEFAULT_LEAK_SLOPE: f32 = 0.01;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f32 },
    Relu,
    Tanh,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAK_SLOPE,
        }
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative at a pre-activation value. The kink at 0 takes the positive side.
    #[inline]
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// Positive scaling of a neuron commutes with the activation.
    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, Activation::LeakyRelu { .. } | Activation::Relu)
    }

    /// `f(-x) = -f(x)`.
    pub fn is_odd(self) -> bool {
        matches!(self, Activation::Tanh)
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::LeakyRelu { .. } => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn leak_slope(self) -> f32 {
        match self {
            Activation::LeakyRelu { slope } => slope,
            _ => 0.0,
        }
    }

    pub fn from_code(code: u8, slope: f32) -> Option<Self> {
        match code {
            0 => Some(Activation::LeakyRelu { slope }),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Architecture of a network: layer widths (input first, output last) and the
/// hidden activation. Parameters are always `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecFields")]
pub struct MlpSpec {
    widths: Vec<usize>,
    activation: Activation,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFields {
    widths: Vec<usize>,
    #[serde(default)]
    activation: Activation,
}

impl TryFrom<SpecFields> for MlpSpec {
    type Error = Error;

    fn try_from(f: SpecFields) -> Result<Self> {
        MlpSpec::new(f.widths, f.activation)
    }
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least an input and an output layer, got {} widths",
                widths.len()
            )));
        }
        if let Some(i) = widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!("layer {i} has width 0")));
        }
        if let Activation::LeakyRelu { slope } = activation {
            if !slope.is_finite() {
                return Err(Error::InvalidSpec("leak slope must be finite".into()));
            }
        }
        Ok(Self { widths, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Number of weight matrices.
    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Weights and biases of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    weights: Vec<Array2<f32>>,
    biases: Vec<Array1<f32>>,
}

impl MlpParams {
    pub fn from_parts(
        spec: MlpSpec,
        weights: Vec<Array2<f32>>,
        biases: Vec<Array1<f32>>,
    ) -> Result<Self> {
        let layers = spec.num_layers();
        if weights.len() != layers || biases.len() != layers {
            return Err(shape_err(format!(
                "expected {layers} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (fan_in, fan_out) = (spec.widths[i], spec.widths[i + 1]);
            if w.dim() != (fan_in, fan_out) || b.len() != fan_out {
                return Err(shape_err(format!(
                    "layer {i}: expected {fan_in}x{fan_out} weights and {fan_out} biases, got {:?} and {}",
                    w.dim(),
                    b.len()
                )));
            }
        }
        let params = Self {
            spec,
            weights,
            biases,
        };
        if !params.is_finite() {
            return Err(Error::NonFinite("parameter construction".into()));
        }
        Ok(params)
    }

    /// All-zero parameters.
    pub fn zeros(spec: &MlpSpec) -> Self {
        let weights = spec
            .widths
            .windows(2)
            .map(|w| Array2::zeros((w[0], w[1])))
            .collect();
        let biases = spec.widths[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Self {
            spec: spec.clone(),
            weights,
            biases,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Array2<f32>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f32>] {
        &self.biases
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Array2<f32>] {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [Array1<f32>] {
        &mut self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Parameters flattened as `w0, b0, w1, b1, ...`, each matrix row-major.
    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.spec.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Inverse of [`MlpParams::to_flat`].
    pub fn from_flat(spec: &MlpSpec, flat: &[f32]) -> Result<Self> {
        if flat.len() != spec.num_params() {
            return Err(shape_err(format!(
                "expected {} flat parameters, got {}",
                spec.num_params(),
                flat.len()
            )));
        }
        let mut params = Self::zeros(spec);
        let mut offset = 0;
        for tensor in params.tensors_mut() {
            let n = tensor.len();
            tensor.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("parameter construction".into()));
        }
        Ok(params)
    }

    /// Mutable views of every tensor in flat order.
    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Bitwise fingerprint of the parameters (FNV-1a over the raw `f32` bits).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.to_flat() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Largest absolute entry-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &MlpParams) -> Result<f32> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch(
                "cannot diff parameters of different architectures".into(),
            ));
        }
        Ok(self
            .to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// Reverse-mode results: parameter gradients mirror [`MlpParams`], input
/// gradients mirror the input batch.
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub d_weights: Vec<Array2<f32>>,
    pub d_biases: Vec<Array1<f32>>,
    pub d_inputs: Array2<f32>,
}

impl GradBundle {
    /// Gradient tensors in the same flat order as [`MlpParams::to_flat`].
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut out = Vec::with_capacity(2 * self.d_weights.len());
        for (w, b) in self.d_weights.iter().zip(&self.d_biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f32> {
        self.tensors().concat()
    }
}

/// Glorot-normal initialization: every weight and bias of layer `i` is drawn from
/// `N(0, sqrt(2 / (fan_in + fan_out)))`.
pub fn init_glorot(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::zeros(spec);
    for i in 0..spec.num_layers() {
        let sigma = glorot_std(spec.widths[i], spec.widths[i + 1]);
        let normal = Normal::new(0.0f32, sigma).expect("finite sigma");
        params.weights[i].mapv_inplace(|_| normal.sample(&mut rng));
        params.biases[i].mapv_inplace(|_| normal.sample(&mut rng));
    }
    params
}

pub fn glorot_std(fan_in: usize, fan_out: usize) -> f32 {
    (2.0 / (fan_in + fan_out) as f64).sqrt() as f32
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Pre-activations of every layer; the last one is the network output.
    pre: Vec<Array2<f32>>,
    /// Activated hidden layers.
    hidden: Vec<Array2<f32>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f32> {
        self.pre.last().expect("at least one layer")
    }

    pub fn into_output(mut self) -> Array2<f32> {
        self.pre.pop().expect("at least one layer")
    }
}

fn check_inputs(params: &MlpParams, inputs: &ArrayView2<f32>) -> Result<()> {
    if inputs.ncols() != params.spec.input_dim() {
        return Err(shape_err(format!(
            "input has {} columns, network expects {}",
            inputs.ncols(),
            params.spec.input_dim()
        )));
    }
    Ok(())
}

pub fn forward_traced(params: &MlpParams, inputs: ArrayView2<f32>) -> Result<ForwardTrace> {
    check_inputs(params, &inputs)?;
    let act = params.spec.activation;
    let layers = params.spec.num_layers();
    let mut pre = Vec::with_capacity(layers);
    let mut hidden: Vec<Array2<f32>> = Vec::with_capacity(layers - 1);
    for i in 0..layers {
        let z = {
            let x = if i == 0 { inputs } else { hidden[i - 1].view() };
            x.dot(&params.weights[i]) + &params.biases[i]
        };
        if i + 1 < layers {
            hidden.push(z.mapv(|v| act.apply(v)));
        }
        pre.push(z);
    }
    Ok(ForwardTrace { pre, hidden })
}

/// Network outputs for a batch of input rows.
pub fn forward(params: &MlpParams, inputs: ArrayView2<f32>) -> Result<Array2<f32>> {
    Ok(forward_traced(params, inputs)?.into_output())
}

/// Gradients of `sum(upstream ⊙ output)` using a trace from [`forward_traced`]
/// on the same `inputs`.
pub fn backward_from_trace(
    params: &MlpParams,
    inputs: ArrayView2<f32>,
    trace: &ForwardTrace,
    upstream: ArrayView2<f32>,
) -> Result<GradBundle> {
    check_inputs(params, &inputs)?;
    let out = trace.output();
    if upstream.dim() != out.dim() || inputs.nrows() != out.nrows() {
        return Err(shape_err(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.dim(),
            out.dim()
        )));
    }
    let act = params.spec.activation;
    let layers = params.spec.num_layers();
    let mut d_weights = Vec::with_capacity(layers);
    let mut d_biases = Vec::with_capacity(layers);
    let mut delta = upstream.to_owned();
    let mut d_inputs = None;
    for i in (0..layers).rev() {
        let x = if i == 0 {
            inputs
        } else {
            trace.hidden[i - 1].view()
        };
        d_weights.push(x.t().dot(&delta));
        d_biases.push(delta.sum_axis(Axis(0)));
        let mut d_prev = delta.dot(&params.weights[i].t());
        if i == 0 {
            d_inputs = Some(d_prev);
        } else {
            Zip::from(&mut d_prev)
                .and(&trace.pre[i - 1])
                .for_each(|d, &z| *d *= act.derivative(z));
            delta = d_prev;
        }
    }
    d_weights.reverse();
    d_biases.reverse();
    Ok(GradBundle {
        d_weights,
        d_biases,
        d_inputs: d_inputs.expect("at least one layer"),
    })
}

/// Exact gradients of `sum(upstream ⊙ forward(params, inputs))` with respect to
/// weights, biases and inputs.
pub fn backward(
    params: &MlpParams,
    inputs: ArrayView2<f32>,
    upstream: ArrayView2<f32>,
) -> Result<GradBundle> {
    let trace = forward_traced(params, inputs)?;
    backward_from_trace(params, inputs, &trace, upstream)
}

/// Mean absolute error over every batch row and output coordinate, with its
/// gradient `sign(pred - target) / count` (`sign(0) = 0`).
pub fn l1_output_loss(
    pred: ArrayView2<f32>,
    target: ArrayView2<f32>,
) -> Result<(f64, Array2<f32>)> {
    if pred.dim() != target.dim() {
        return Err(shape_err(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let count = pred.len();
    if count == 0 {
        return Ok((0.0, Array2::zeros(pred.dim())));
    }
    let inv = 1.0 / count as f32;
    let mut grad = Array2::zeros(pred.dim());
    let mut total = 0.0f64;
    Zip::from(&mut grad)
        .and(&pred)
        .and(&target)
        .for_each(|g, &p, &t| {
            let d = p - t;
            total += (d as f64).abs();
            *g = if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            };
        });
    Ok((total / count as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn leaky() -> Activation {
        Activation::default()
    }

    #[test]
    fn glorot_sigma_values() {
        assert!((glorot_std(784, 128) - 0.046829).abs() < 1e-6);
        assert_eq!(glorot_std(1, 1), 1.0);
    }

    #[test]
    fn glorot_is_deterministic() {
        let spec = MlpSpec::new(vec![5, 4, 3], leaky()).unwrap();
        assert_eq!(init_glorot(&spec, 7), init_glorot(&spec, 7));
        assert_ne!(init_glorot(&spec, 7), init_glorot(&spec, 8));
    }

    #[test]
    fn glorot_empirical_std() {
        let spec = MlpSpec::new(vec![400, 200, 2], leaky()).unwrap();
        let p = init_glorot(&spec, 1);
        let w = &p.weights()[0];
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let expected = (2.0f64 / 600.0).sqrt();
        assert!(mean.abs() < 0.01 * expected * 10.0);
        assert!((var.sqrt() - expected).abs() / expected < 0.02);
    }

    #[test]
    fn spec_rejects_single_layer() {
        assert!(matches!(
            MlpSpec::new(vec![3], leaky()),
            Err(Error::InvalidSpec(_))
        ));
        assert!(MlpSpec::new(vec![3, 0, 1], leaky()).is_err());
    }

    #[test]
    fn identity_net_passes_nonnegative_inputs() {
        let spec = MlpSpec::new(vec![3, 3, 3], leaky()).unwrap();
        let eye = Array2::<f32>::eye(3);
        let p = MlpParams::from_parts(
            spec,
            vec![eye.clone(), eye],
            vec![Array1::zeros(3), Array1::zeros(3)],
        )
        .unwrap();
        let x = array![[0.0f32, 1.5, 2.0], [3.0, 0.25, 0.0]];
        assert_eq!(forward(&p, x.view()).unwrap(), x);
    }

    #[test]
    fn hand_computed_chain() {
        // 3 -> 2 -> 2 with one negative pre-activation.
        let spec = MlpSpec::new(vec![3, 2, 2], leaky()).unwrap();
        let w0 = array![[0.5f32, -1.0], [0.25, 0.5], [-0.5, 0.0]];
        let b0 = array![0.1f32, -0.2];
        let w1 = array![[1.0f32, 2.0], [-1.0, 0.5]];
        let b1 = array![0.0f32, 1.0];
        let p = MlpParams::from_parts(spec, vec![w0, w1], vec![b0, b1]).unwrap();
        let x = array![[1.0f32, 2.0, 3.0]];
        // z0 = [0.5+0.5-1.5+0.1, -1+1+0-0.2] = [-0.4, -0.2]
        // h  = [-0.004, -0.002]
        // y  = [-0.004+0.002, -0.008-0.001+1] = [-0.002, 0.991]
        let y = forward(&p, x.view()).unwrap();
        assert!((y[[0, 0]] - -0.002).abs() < 1e-6);
        assert!((y[[0, 1]] - 0.991).abs() < 1e-6);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let spec = MlpSpec::new(vec![3, 2], leaky()).unwrap();
        let p = init_glorot(&spec, 0);
        let x = Array2::<f32>::zeros((2, 4));
        assert!(matches!(
            forward(&p, x.view()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = MlpSpec::new(vec![4, 3, 2], Activation::Tanh).unwrap();
        let p = init_glorot(&spec, 3);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f32 - j as f32) * 0.3);
        let g = backward(&p, x.view(), Array2::zeros((5, 2)).view()).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(g.d_inputs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_net_input_gradient_is_upstream_times_wt() {
        let spec = MlpSpec::new(vec![3, 2], leaky()).unwrap();
        let p = init_glorot(&spec, 11);
        let x = array![[0.3f32, -0.2, 1.0], [1.0, 2.0, -3.0]];
        let up = array![[1.0f32, -2.0], [0.5, 0.25]];
        let g = backward(&p, x.view(), up.view()).unwrap();
        let expected = up.dot(&p.weights()[0].t());
        for (a, b) in g.d_inputs.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let spec = MlpSpec::new(vec![3, 2], leaky()).unwrap();
        let p = init_glorot(&spec, 1);
        let x = Array2::<f32>::zeros((2, 3));
        assert!(backward(&p, x.view(), Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn l1_loss_values() {
        let a = array![[1.0f32, 2.0]];
        assert_eq!(l1_output_loss(a.view(), a.view()).unwrap().0, 0.0);
        let pred = array![[1.0f32, -1.0]];
        let target = array![[0.0f32, 0.0]];
        let (loss, grad) = l1_output_loss(pred.view(), target.view()).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad, array![[0.5f32, -0.5]]);
        assert!(l1_output_loss(pred.view(), Array2::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn l1_loss_tie_has_zero_gradient() {
        let p = array![[1.0f32, 3.0]];
        let t = array![[1.0f32, 2.0]];
        let (_, g) = l1_output_loss(p.view(), t.view()).unwrap();
        assert_eq!(g, array![[0.0f32, 0.5]]);
    }

    #[test]
    fn derivative_at_zero_takes_positive_side() {
        assert_eq!(leaky().derivative(0.0), 1.0);
        assert_eq!(Activation::Relu.derivative(0.0), 1.0);
        assert_eq!(leaky().derivative(-1.0), DEFAULT_LEAK_SLOPE);
    }

    #[test]
    fn flat_roundtrip() {
        let spec = MlpSpec::new(vec![4, 3, 2], leaky()).unwrap();
        let p = init_glorot(&spec, 5);
        assert_eq!(MlpParams::from_flat(&spec, &p.to_flat()).unwrap(), p);
        assert!(MlpParams::from_flat(&spec, &[0.0; 3]).is_err());
    }
}
