//! First-order optimizers and the divide-by-ten learning-rate schedule.
//!
//! Update rules follow the usual textbook (PyTorch-default) formulations. The
//! optimizer works on any ordered list of `f32` tensors, so the same state type
//! drives network weights and the synthesized query inputs.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{GradBundle, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    RmsProp,
    AdaDelta,
    Rprop,
    AdaGrad,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 6] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adam,
        OptimizerKind::RmsProp,
        OptimizerKind::AdaDelta,
        OptimizerKind::Rprop,
        OptimizerKind::AdaGrad,
    ];

    pub fn default_lr(self) -> f32 {
        match self {
            OptimizerKind::Sgd => 1e-2,
            OptimizerKind::Adam => 1e-3,
            OptimizerKind::RmsProp => 1e-2,
            OptimizerKind::AdaDelta => 1.0,
            OptimizerKind::Rprop => 1e-2,
            OptimizerKind::AdaGrad => 1e-2,
        }
    }
}

/// Optimizer hyperparameters. For Rprop, `lr` is the initial per-weight step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// RMSProp squared-gradient decay.
    pub rms_decay: f32,
    /// AdaDelta running-average decay.
    pub rho: f32,
    pub eta_minus: f32,
    pub eta_plus: f32,
    pub step_min: f32,
    pub step_max: f32,
}

impl Hyperparams {
    pub fn standard(kind: OptimizerKind) -> Self {
        let eps = match kind {
            OptimizerKind::AdaDelta => 1e-6,
            OptimizerKind::AdaGrad => 1e-10,
            _ => 1e-8,
        };
        Self {
            lr: kind.default_lr(),
            beta1: 0.9,
            beta2: 0.999,
            eps,
            rms_decay: 0.99,
            rho: 0.9,
            eta_minus: 0.5,
            eta_plus: 1.2,
            step_min: 1e-6,
            step_max: 50.0,
        }
    }
}

/// One optimizer instance with its per-parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    pub hyper: Hyperparams,
    steps: u64,
    // Meaning depends on kind: Adam (m, v), RMSProp (v, -), AdaDelta
    // (E[g^2], E[dx^2]), Rprop (prev grad, step size), AdaGrad (sum g^2, -).
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        Self::with_hyper(kind, Hyperparams::standard(kind))
    }

    pub fn with_lr(kind: OptimizerKind, lr: f32) -> Self {
        let mut hyper = Hyperparams::standard(kind);
        hyper.lr = lr;
        Self::with_hyper(kind, hyper)
    }

    pub fn with_hyper(kind: OptimizerKind, hyper: Hyperparams) -> Self {
        Self {
            kind,
            hyper,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f32 {
        self.hyper.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.hyper.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Clears moment buffers and the step counter, keeping hyperparameters.
    pub fn reset(&mut self) {
        self.steps = 0;
        self.first.clear();
        self.second.clear();
    }

    /// One update of network parameters.
    pub fn step(&mut self, params: &mut MlpParams, grads: &GradBundle) -> Result<()> {
        let mut tensors = params.tensors_mut();
        let grads = grads.tensors();
        self.step_tensors(&mut tensors, &grads)
    }

    /// One update of an arbitrary ordered list of tensors.
    pub fn step_tensors(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(shape_err("gradient tensors do not match parameters"));
        }
        if self.first.is_empty() {
            // Rprop starts every per-weight step at lr.
            let init_second = match self.kind {
                OptimizerKind::Rprop => self.hyper.lr,
                _ => 0.0,
            };
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = params.iter().map(|p| vec![init_second; p.len()]).collect();
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(b, p)| b.len() != p.len())
        {
            return Err(shape_err("optimizer buffers do not match parameters"));
        }
        if !(self.hyper.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.hyper.lr
            )));
        }

        self.steps += 1;
        let h = self.hyper;
        let t = self.steps as i32;
        let bc1 = 1.0 - (h.beta1 as f64).powi(t);
        let bc2 = 1.0 - (h.beta2 as f64).powi(t);

        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let a = &mut self.first[k];
            let b = &mut self.second[k];
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, &gi) in p.iter_mut().zip(g.iter()) {
                        *x -= h.lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    for i in 0..p.len() {
                        let gi = g[i];
                        a[i] = h.beta1 * a[i] + (1.0 - h.beta1) * gi;
                        b[i] = h.beta2 * b[i] + (1.0 - h.beta2) * gi * gi;
                        let m_hat = a[i] as f64 / bc1;
                        let v_hat = b[i] as f64 / bc2;
                        p[i] -= (h.lr as f64 * m_hat / (v_hat.sqrt() + h.eps as f64)) as f32;
                    }
                }
                OptimizerKind::RmsProp => {
                    for i in 0..p.len() {
                        let gi = g[i];
                        a[i] = h.rms_decay * a[i] + (1.0 - h.rms_decay) * gi * gi;
                        p[i] -= h.lr * gi / (a[i].sqrt() + h.eps);
                    }
                }
                OptimizerKind::AdaDelta => {
                    for i in 0..p.len() {
                        let gi = g[i];
                        a[i] = h.rho * a[i] + (1.0 - h.rho) * gi * gi;
                        let delta = (b[i] + h.eps).sqrt() / (a[i] + h.eps).sqrt() * gi;
                        b[i] = h.rho * b[i] + (1.0 - h.rho) * delta * delta;
                        p[i] -= h.lr * delta;
                    }
                }
                OptimizerKind::Rprop => {
                    for i in 0..p.len() {
                        let mut gi = g[i];
                        let s = gi * a[i];
                        if s > 0.0 {
                            b[i] = (b[i] * h.eta_plus).min(h.step_max);
                        } else if s < 0.0 {
                            b[i] = (b[i] * h.eta_minus).max(h.step_min);
                            gi = 0.0;
                        }
                        if gi > 0.0 {
                            p[i] -= b[i];
                        } else if gi < 0.0 {
                            p[i] += b[i];
                        }
                        a[i] = gi;
                    }
                }
                OptimizerKind::AdaGrad => {
                    for i in 0..p.len() {
                        let gi = g[i];
                        a[i] += gi * gi;
                        p[i] -= h.lr * gi / (a[i].sqrt() + h.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Iterations after which the learning rate is divided by ten.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct StepSchedule {
    triggers: Vec<usize>,
}

impl StepSchedule {
    pub const DIVISOR: f32 = 10.0;

    pub fn new(triggers: Vec<usize>) -> Result<Self> {
        if triggers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "schedule triggers must be strictly increasing: {triggers:?}"
            )));
        }
        Ok(Self { triggers })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn triggers(&self) -> &[usize] {
        &self.triggers
    }

    pub fn fires_at(&self, iteration: usize) -> bool {
        self.triggers.binary_search(&iteration).is_ok()
    }
}

impl TryFrom<Vec<usize>> for StepSchedule {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<StepSchedule> for Vec<usize> {
    fn from(s: StepSchedule) -> Self {
        s.triggers
    }
}

/// Divides the learning rate by ten when `iteration` is a trigger.
pub fn apply_schedule(
    mut state: OptimizerState,
    iteration: usize,
    schedule: &StepSchedule,
) -> OptimizerState {
    if schedule.fires_at(iteration) {
        state.hyper.lr /= StepSchedule::DIVISOR;
    }
    state
}
