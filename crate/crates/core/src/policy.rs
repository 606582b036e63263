//! The toy stand-in for a generative model: a featurized softmax policy
//! over three actions, each realizing a concrete response string.
//!
//! Two actions emit well-formed answers (A or B), the third emits a fixed
//! malformed string; the explicit malformed action is what gives the
//! format reward gradient pressure. Logits are linear in the features,
//! `(W x + b) / temperature`, so log-probability gradients are exact and
//! cheap to verify against finite differences.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::protocol::{canonical_response, Label};

pub const NUM_ACTIONS: usize = 3;

/// The enumerable action space, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    AnswerDefect,
    AnswerNormal,
    EmitMalformed,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] =
        [Action::AnswerDefect, Action::AnswerNormal, Action::EmitMalformed];

    pub fn index(self) -> usize {
        match self {
            Action::AnswerDefect => 0,
            Action::AnswerNormal => 1,
            Action::EmitMalformed => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    /// The label this action answers with, if it answers at all.
    pub fn answer(self) -> Option<Label> {
        match self {
            Action::AnswerDefect => Some(Label::Defect),
            Action::AnswerNormal => Some(Label::Normal),
            Action::EmitMalformed => None,
        }
    }

    /// The action that answers with the given label.
    pub fn for_label(label: Label) -> Action {
        match label {
            Label::Defect => Action::AnswerDefect,
            Label::Normal => Action::AnswerNormal,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("feature length {got} does not match feature dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("features contain non-finite values")]
    NonFiniteFeatures,
    #[error("invalid action distribution: {0}")]
    InvalidDistribution(String),
    #[error("checkpoint is inconsistent: {0}")]
    BadCheckpoint(String),
}

/// Policy parameters: a weight row and bias per action, plus a softmax
/// temperature. Immutable values; updates produce new instances.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub temperature: f64,
}

impl PolicyParams {
    /// All-zero parameters: the uniform policy.
    pub fn zeros(feature_dim: usize, temperature: f64) -> Self {
        PolicyParams {
            weights: Array2::zeros((NUM_ACTIONS, feature_dim)),
            bias: Array1::zeros(NUM_ACTIONS),
            temperature,
        }
    }

    /// Seeded Gaussian initialization.
    pub fn gaussian(feature_dim: usize, temperature: f64, std: f64, rng: &mut impl Rng) -> Self {
        let normal = rand_distr::Normal::new(0.0, std).expect("valid std");
        PolicyParams {
            weights: Array2::from_shape_fn((NUM_ACTIONS, feature_dim), |_| rng.sample(normal)),
            bias: Array1::from_shape_fn(NUM_ACTIONS, |_| rng.sample(normal)),
            temperature,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
            && self.bias.iter().all(|v| v.is_finite())
            && self.temperature.is_finite()
    }

    /// Temperature-scaled logits for a feature vector.
    fn scaled_logits(&self, features: &[f64]) -> Result<Array1<f64>, PolicyError> {
        if features.len() != self.feature_dim() {
            return Err(PolicyError::DimensionMismatch {
                expected: self.feature_dim(),
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteFeatures);
        }
        let x = ArrayView1::from(features);
        Ok((self.weights.dot(&x) + &self.bias) / self.temperature)
    }

    /// Functional ascent step: `theta + eta * grad`.
    pub fn step(&self, grad: &PolicyGradient, eta: f64) -> PolicyParams {
        PolicyParams {
            weights: &self.weights + &(eta * &grad.weights),
            bias: &self.bias + &(eta * &grad.bias),
            temperature: self.temperature,
        }
    }
}

/// Gradient with respect to every weight and bias entry, mirroring the
/// parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl PolicyGradient {
    pub fn zeros(feature_dim: usize) -> Self {
        PolicyGradient {
            weights: Array2::zeros((NUM_ACTIONS, feature_dim)),
            bias: Array1::zeros(NUM_ACTIONS),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.mapv_inplace(|v| v * factor);
        self.bias.mapv_inplace(|v| v * factor);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }

    /// Flatten to `[weights row-major, bias]`; the layout used by
    /// finite-difference checks.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().chain(self.bias.iter()).copied().collect()
    }
}

/// A probability vector over the three actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probabilities: [f64; NUM_ACTIONS],
}

impl ActionDistribution {
    /// Validates non-negativity and normalization (sum within 1e-9 of 1).
    pub fn new(probabilities: [f64; NUM_ACTIONS]) -> Result<Self, PolicyError> {
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(PolicyError::InvalidDistribution(format!(
                "entries must be finite and non-negative: {probabilities:?}"
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PolicyError::InvalidDistribution(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(ActionDistribution { probabilities })
    }

    pub fn probabilities(&self) -> &[f64; NUM_ACTIONS] {
        &self.probabilities
    }

    pub fn prob(&self, action: Action) -> f64 {
        self.probabilities[action.index()]
    }
}

/// Softmax of the temperature-scaled logits, computed with
/// max-subtraction so logits up to around +-700 stay finite.
pub fn action_distribution(
    params: &PolicyParams,
    features: &[f64],
) -> Result<ActionDistribution, PolicyError> {
    let logits = params.scaled_logits(features)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let mut probabilities = [0.0; NUM_ACTIONS];
    for (p, e) in probabilities.iter_mut().zip(exp) {
        *p = e / sum;
    }
    Ok(ActionDistribution { probabilities })
}

/// Greedy action: the argmax of the action distribution, with ties broken
/// toward the lower action index. Computed on the raw logits, which order
/// identically to the softmax probabilities for every positive
/// temperature.
pub fn greedy_action(params: &PolicyParams, features: &[f64]) -> Result<Action, PolicyError> {
    if features.len() != params.feature_dim() {
        return Err(PolicyError::DimensionMismatch {
            expected: params.feature_dim(),
            got: features.len(),
        });
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::NonFiniteFeatures);
    }
    let x = ArrayView1::from(features);
    let logits = params.weights.dot(&x) + &params.bias;
    let mut best = 0;
    for k in 1..NUM_ACTIONS {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    Ok(Action::from_index(best).expect("index in range"))
}

/// Inverse-CDF sample over the fixed action order using one draw from the
/// stream; deterministic given the stream state.
pub fn sample_action(dist: &ActionDistribution, rng: &mut impl Rng) -> Action {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for action in Action::ALL {
        cumulative += dist.prob(action);
        if u < cumulative {
            return action;
        }
    }
    // Floating-point shortfall in the cumulative sum.
    Action::EmitMalformed
}

/// The fixed malformed emission: the closing answer tag is missing.
pub const MALFORMED_EMISSION: &str = "<think>inspecting the object</think> <answer>A";

/// Realize an action as a concrete response string for a sample.
pub fn realize_response(action: Action, sample: &Sample) -> String {
    match action.answer() {
        Some(label) => canonical_response(
            &format!("inspecting the {}", sample.object_name),
            label,
        ),
        None => MALFORMED_EMISSION.to_string(),
    }
}

/// Log-probability of an action under the policy.
pub fn log_prob(
    params: &PolicyParams,
    features: &[f64],
    action: Action,
) -> Result<f64, PolicyError> {
    let logits = params.scaled_logits(features)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    Ok(logits[action.index()] - log_sum)
}

/// Log-probability together with its exact gradient.
///
/// For softmax logits, d ln pi(a) / d logit_k = delta_{ak} - pi(k); the
/// chain rule through `(W x + b) / T` scales by `x_j / T` for weights and
/// `1 / T` for biases.
pub fn log_prob_and_grad(
    params: &PolicyParams,
    features: &[f64],
    action: Action,
) -> Result<(f64, PolicyGradient), PolicyError> {
    let lp = log_prob(params, features, action)?;
    let dist = action_distribution(params, features)?;
    let x = ArrayView1::from(features);
    let mut grad = PolicyGradient::zeros(params.feature_dim());
    for k in 0..NUM_ACTIONS {
        let indicator = if k == action.index() { 1.0 } else { 0.0 };
        let dlogit = (indicator - dist.probabilities[k]) / params.temperature;
        grad.bias[k] = dlogit;
        grad.weights.row_mut(k).assign(&(dlogit * &x));
    }
    Ok((lp, grad))
}

/// Probability mass the policy puts on the correct answer for a label.
/// Malformed mass never counts as correct.
pub fn prob_correct(dist: &ActionDistribution, truth: Label) -> f64 {
    dist.prob(Action::for_label(truth))
}

/// Checkpoint schema: a small header plus flat row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointData {
    pub num_actions: usize,
    pub feature_dim: usize,
    pub temperature: f64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl CheckpointData {
    pub fn from_params(params: &PolicyParams) -> Self {
        CheckpointData {
            num_actions: NUM_ACTIONS,
            feature_dim: params.feature_dim(),
            temperature: params.temperature,
            weights: params.weights.iter().copied().collect(),
            bias: params.bias.to_vec(),
        }
    }

    pub fn into_params(self) -> Result<PolicyParams, PolicyError> {
        if self.num_actions != NUM_ACTIONS {
            return Err(PolicyError::BadCheckpoint(format!(
                "expected {NUM_ACTIONS} actions, got {}",
                self.num_actions
            )));
        }
        if self.weights.len() != NUM_ACTIONS * self.feature_dim {
            return Err(PolicyError::BadCheckpoint(format!(
                "weight array has {} entries, expected {}",
                self.weights.len(),
                NUM_ACTIONS * self.feature_dim
            )));
        }
        if self.bias.len() != NUM_ACTIONS {
            return Err(PolicyError::BadCheckpoint(format!(
                "bias array has {} entries, expected {NUM_ACTIONS}",
                self.bias.len()
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(PolicyError::BadCheckpoint(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        let weights = Array2::from_shape_vec((NUM_ACTIONS, self.feature_dim), self.weights)
            .expect("shape checked above");
        Ok(PolicyParams {
            weights,
            bias: Array1::from_vec(self.bias),
            temperature: self.temperature,
        })
    }
}
