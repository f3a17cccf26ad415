//! Full model state and the composed forward/backward pass.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{self, AttendedRepresentation, AttentionError, AttentionGrads, AttentionParams};
use crate::fuzzy::{self, FuzzyError, FuzzyGrads, FuzzyRuleBase, InferenceTrace};
use crate::matrix::Matrix;
use crate::series::{RegressionTarget, Task, WindowSpec};
use crate::wavelet::{self, MultiScaleTensor, WaveletBasis, WaveletError, WaveletKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error("window has {found} steps x {found_dim} channels, model expects {expected} x {expected_dim}")]
    WindowShape {
        expected: usize,
        expected_dim: usize,
        found: usize,
        found_dim: usize,
    },
    #[error("inconsistent model: {0}")]
    Inconsistent(&'static str),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub window: usize,
    pub horizon: usize,
    pub depth: usize,
    pub rules: usize,
    pub d_k: usize,
    pub d_v: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 16,
            horizon: 1,
            depth: 1,
            rules: 16,
            d_k: 4,
            d_v: 4,
        }
    }
}

/// How raw inputs are scaled before windows are cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizationPolicy {
    /// Every entity's series is standardized channel-wise on its own
    /// history (sample sd; constant channels become zeros).
    PerSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub seed: u64,
    pub config_hash: String,
}

/// Everything needed to reproduce predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub schema_version: u32,
    pub task: Task,
    pub basis: WaveletKind,
    pub depth: usize,
    pub window: usize,
    pub horizon: usize,
    pub target_channel: usize,
    pub regression_target: RegressionTarget,
    pub channels: Vec<String>,
    pub standardization: StandardizationPolicy,
    pub attention: AttentionParams,
    pub rules: FuzzyRuleBase,
    pub fingerprint: Fingerprint,
}

impl ModelState {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ModelError::Inconsistent("schema version"));
        }
        if self.channels.is_empty() {
            return Err(ModelError::Inconsistent("no channels"));
        }
        if self.target_channel >= self.channels.len() {
            return Err(ModelError::Inconsistent("target channel out of range"));
        }
        wavelet::check_depth(self.window, self.depth, &WaveletBasis::new(self.basis))?;
        self.attention.validate()?;
        self.rules.validate()?;
        if self.attention.input_dim() != 2 * self.depth * self.channels.len() {
            return Err(ModelError::Inconsistent("attention input width != 2kd"));
        }
        if self.rules.input_dim() != self.attention.d_v() {
            return Err(ModelError::Inconsistent("rule base input dimension != d_v"));
        }
        Ok(())
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            window: self.window,
            horizon: self.horizon,
            depth: self.depth,
            task: self.task,
            target_channel: self.target_channel,
            regression_target: self.regression_target,
        }
    }

    pub fn basis(&self) -> WaveletBasis {
        WaveletBasis::new(self.basis)
    }

    /// Multi-scale encoding of one raw (standardized) window.
    pub fn encode(&self, window: &Matrix) -> Result<MultiScaleTensor, ModelError> {
        if window.rows() != self.window || window.cols() != self.channels.len() {
            return Err(ModelError::WindowShape {
                expected: self.window,
                expected_dim: self.channels.len(),
                found: window.rows(),
                found_dim: window.cols(),
            });
        }
        Ok(wavelet::encode(window, &self.basis(), self.depth)?)
    }

    /// Full forward pass: decompose → assemble → attend → infer, with the
    /// logistic link applied for classification.
    pub fn forward(&self, window: &Matrix) -> Result<Forward, ModelError> {
        let z = self.encode(window)?;
        let attended = attention::encode(&z, &self.attention)?;
        let inference = fuzzy::infer(&attended.h_pooled, &self.rules)?;
        let prediction = link(self.task, inference.output);
        Ok(Forward {
            prediction,
            z,
            attended,
            inference,
        })
    }

    pub fn predict(&self, window: &Matrix) -> Result<f64, ModelError> {
        Ok(self.forward(window)?.prediction)
    }

    /// Premise + attention parameters (`W_Q, W_K, W_V, c, σ`), then the
    /// consequents (`p, r`) when requested, flattened in that order.
    pub fn params_flat(&self, with_consequents: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count(with_consequents));
        out.extend_from_slice(self.attention.w_q.as_slice());
        out.extend_from_slice(self.attention.w_k.as_slice());
        out.extend_from_slice(self.attention.w_v.as_slice());
        out.extend_from_slice(self.rules.centers.as_slice());
        out.extend_from_slice(self.rules.spreads.as_slice());
        if with_consequents {
            out.extend_from_slice(self.rules.weights.as_slice());
            out.extend_from_slice(&self.rules.biases);
        }
        out
    }

    pub fn param_count(&self, with_consequents: bool) -> usize {
        let premise = self.attention.w_q.as_slice().len()
            + self.attention.w_k.as_slice().len()
            + self.attention.w_v.as_slice().len()
            + 2 * self.rules.centers.as_slice().len();
        if with_consequents {
            premise + self.rules.weights.as_slice().len() + self.rules.biases.len()
        } else {
            premise
        }
    }

    /// Inverse of [`params_flat`](Self::params_flat). Spreads are not
    /// clamped here.
    pub fn set_params_flat(&mut self, flat: &[f64], with_consequents: bool) {
        assert_eq!(flat.len(), self.param_count(with_consequents));
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(self.attention.w_q.as_mut_slice());
        take(self.attention.w_k.as_mut_slice());
        take(self.attention.w_v.as_mut_slice());
        take(self.rules.centers.as_mut_slice());
        take(self.rules.spreads.as_mut_slice());
        if with_consequents {
            take(self.rules.weights.as_mut_slice());
            take(&mut self.rules.biases);
        }
    }
}

/// Identity for regression, logistic for classification.
pub fn link(task: Task, raw: f64) -> f64 {
    match task {
        Task::Regression => raw,
        Task::Classification => sigmoid(raw),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub prediction: f64,
    pub z: MultiScaleTensor,
    pub attended: AttendedRepresentation,
    pub inference: InferenceTrace,
}

/// Gradient of a scalar loss with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub attention: AttentionGrads,
    pub fuzzy: FuzzyGrads,
}

impl Gradients {
    pub fn zeros_like(model: &ModelState) -> Self {
        Self {
            attention: AttentionGrads::zeros_like(&model.attention),
            fuzzy: FuzzyGrads::zeros_like(&model.rules),
        }
    }

    /// Same layout as [`ModelState::params_flat`].
    pub fn to_flat(&self, with_consequents: bool) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.attention.w_q.as_slice());
        out.extend_from_slice(self.attention.w_k.as_slice());
        out.extend_from_slice(self.attention.w_v.as_slice());
        out.extend_from_slice(self.fuzzy.centers.as_slice());
        out.extend_from_slice(self.fuzzy.spreads.as_slice());
        if with_consequents {
            out.extend_from_slice(self.fuzzy.weights.as_slice());
            out.extend_from_slice(&self.fuzzy.biases);
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.attention.w_q.scale(s);
        self.attention.w_k.scale(s);
        self.attention.w_v.scale(s);
        self.fuzzy.centers.scale(s);
        self.fuzzy.spreads.scale(s);
        self.fuzzy.weights.scale(s);
        self.fuzzy.biases.iter_mut().for_each(|b| *b *= s);
    }
}

/// Forward pass on a pre-encoded window plus backpropagation of
/// `∂L/∂prediction` computed by `d_loss`. Gradients are accumulated into
/// `grads`; the prediction is returned.
pub(crate) fn backprop(
    model: &ModelState,
    z: &Matrix,
    grads: &mut Gradients,
    d_loss: impl FnOnce(f64) -> f64,
) -> f64 {
    let cache = attention::forward(z, &model.attention);
    let h = &cache.representation.h_pooled;
    let trace = fuzzy::infer(h, &model.rules).expect("dimensions validated by caller");
    let prediction = link(model.task, trace.output);
    // d_loss returns ∂L/∂ŷ_raw, i.e. already through the link.
    let d_raw = d_loss(prediction);
    if d_raw != 0.0 {
        let d_h = fuzzy::backward(h, &model.rules, &trace, d_raw, &mut grads.fuzzy);
        attention::backward(z, &cache, &d_h, &mut grads.attention);
    }
    prediction
}

/// Prediction on a pre-encoded window.
pub(crate) fn predict_encoded(model: &ModelState, z: &Matrix) -> f64 {
    let cache = attention::forward(z, &model.attention);
    let trace = fuzzy::infer(&cache.representation.h_pooled, &model.rules).expect("dimensions validated by caller");
    link(model.task, trace.output)
}

/// Normalised rule weights and pooled input for a pre-encoded window.
pub(crate) fn rule_weights_encoded(model: &ModelState, z: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let cache = attention::forward(z, &model.attention);
    let h = cache.representation.h_pooled;
    let trace = fuzzy::infer(&h, &model.rules).expect("dimensions validated by caller");
    (trace.normalized, h)
}
