//! Per-axis feed-forward controller network: a frozen mean/std scaling
//! layer, tanh hidden layers, a linear output, and an unscaling layer.
//! Includes the normalized-squared-error loss, exact reverse-mode
//! gradients, random-search initialization, and the quasi-Newton training
//! entry point shared by the offline and in-flight paths.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{TrainingSample, FEATURE_DIM};
use crate::optim::{minimize, BfgsConfig, BfgsStatus, LineSearchParams};

/// Target variance below which the loss falls back from normalized to plain
/// mean squared error.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Feature or output spread below which scaling uses unit std instead.
const STD_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty training batch")]
    EmptyBatch,
}

/// Fully-connected layer sizes. The feature dimension is pinned by the
/// dataset format; width and depth are free so tests can run reduced nets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub inputs: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { inputs: FEATURE_DIM, hidden_layers: 2, hidden_width: 6 }
    }
}

impl Architecture {
    /// (input, output) size of each weight layer, ending in the scalar
    /// output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = self.inputs;
        for _ in 0..self.hidden_layers {
            dims.push((prev, self.hidden_width));
            prev = self.hidden_width;
        }
        dims.push((prev, 1));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.inputs != FEATURE_DIM {
            return Err(format!(
                "network input dimension must match the {FEATURE_DIM}-feature window, got {}",
                self.inputs
            ));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err("hidden layers need a positive width".into());
        }
        Ok(())
    }
}

/// Frozen normalization statistics. Features are standardized and clamped
/// on the way in; the scalar output is de-standardized on the way out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub feature_mean: [f64; FEATURE_DIM],
    pub feature_std: [f64; FEATURE_DIM],
    pub output_mean: f64,
    pub output_std: f64,
    /// Bound on standardized features; keeps out-of-distribution errors
    /// from driving the first layer far outside its training range.
    pub scaled_clamp: f64,
}

impl FeatureScaling {
    pub fn identity() -> Self {
        Self {
            feature_mean: [0.0; FEATURE_DIM],
            feature_std: [1.0; FEATURE_DIM],
            output_mean: 0.0,
            output_std: 1.0,
            scaled_clamp: f64::INFINITY,
        }
    }

    /// Mean/std statistics of a sample batch. Degenerate spreads fall back
    /// to unit std so the transform stays invertible.
    pub fn fit(samples: &[TrainingSample], scaled_clamp: f64) -> Result<Self, LossError> {
        if samples.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        let n = samples.len() as f64;
        let mut mean = [0.0; FEATURE_DIM];
        let mut out_mean = 0.0;
        for s in samples {
            for (m, f) in mean.iter_mut().zip(s.features.iter()) {
                *m += f;
            }
            out_mean += s.target;
        }
        mean.iter_mut().for_each(|m| *m /= n);
        out_mean /= n;

        let mut var = [0.0; FEATURE_DIM];
        let mut out_var = 0.0;
        for s in samples {
            for ((v, f), m) in var.iter_mut().zip(s.features.iter()).zip(mean.iter()) {
                *v += (f - m) * (f - m);
            }
            out_var += (s.target - out_mean) * (s.target - out_mean);
        }
        let std = var.map(|v| {
            let s = (v / n).sqrt();
            if s < STD_FLOOR {
                1.0
            } else {
                s
            }
        });
        let out_std = {
            let s = (out_var / n).sqrt();
            if s < STD_FLOOR {
                1.0
            } else {
                s
            }
        };
        Ok(Self {
            feature_mean: mean,
            feature_std: std,
            output_mean: out_mean,
            output_std: out_std,
            scaled_clamp,
        })
    }

    pub fn scale(&self, features: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            let z = (features[i] - self.feature_mean[i]) / self.feature_std[i];
            out[i] = z.clamp(-self.scaled_clamp, self.scaled_clamp);
        }
        out
    }

    pub fn unscale_output(&self, y: f64) -> f64 {
        y * self.output_std + self.output_mean
    }

    pub fn scale_output(&self, y: f64) -> f64 {
        (y - self.output_mean) / self.output_std
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = self.feature_mean.iter().chain(self.feature_std.iter()).all(|v| v.is_finite())
            && self.output_mean.is_finite()
            && self.output_std.is_finite();
        if !finite {
            return Err("scaling statistics must be finite".into());
        }
        if self.feature_std.iter().any(|s| !(*s > 0.0)) || !(self.output_std > 0.0) {
            return Err("scaling stds must be positive".into());
        }
        if !(self.scaled_clamp > 0.0) {
            return Err("scaled-feature clamp must be positive".into());
        }
        Ok(())
    }
}

/// One fully-connected layer, weights stored row-major (output x input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn out_dim(&self) -> usize {
        self.biases.len()
    }

    fn in_dim(&self) -> usize {
        if self.biases.is_empty() {
            0
        } else {
            self.weights.len() / self.biases.len()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisNetwork {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

impl AxisNetwork {
    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Layer { weights: vec![0.0; i * o], biases: vec![0.0; o] })
            .collect();
        Self { arch, layers }
    }

    pub fn from_params(arch: Architecture, params: &[f64]) -> Self {
        let mut net = Self::zeros(arch);
        net.set_params(params);
        net
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// Flattened parameter vector: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            p.extend_from_slice(&layer.weights);
            p.extend_from_slice(&layer.biases);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter vector length mismatch");
        let mut at = 0;
        for layer in &mut self.layers {
            let w = layer.weights.len();
            layer.weights.copy_from_slice(&params[at..at + w]);
            at += w;
            let b = layer.biases.len();
            layer.biases.copy_from_slice(&params[at..at + b]);
            at += b;
        }
    }

    /// Layer shapes are consistent with the declared architecture and every
    /// parameter is finite.
    pub fn validate(&self) -> Result<(), String> {
        let dims = self.arch.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(format!("expected {} layers, found {}", dims.len(), self.layers.len()));
        }
        for (k, ((in_dim, out_dim), layer)) in dims.iter().zip(&self.layers).enumerate() {
            if layer.out_dim() != *out_dim || layer.in_dim() != *in_dim {
                return Err(format!(
                    "layer {k}: expected {in_dim}x{out_dim}, found {}x{}",
                    layer.in_dim(),
                    layer.out_dim()
                ));
            }
            if layer.weights.iter().chain(layer.biases.iter()).any(|v| !v.is_finite()) {
                return Err(format!("layer {k} holds non-finite parameters"));
            }
        }
        Ok(())
    }

    /// Forward pass: scale, hidden tanh layers, linear output, unscale.
    pub fn forward(&self, scaling: &FeatureScaling, features: &[f64; FEATURE_DIM]) -> f64 {
        let scaled = scaling.scale(features);
        let mut activation: Vec<f64> = scaled.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim()];
            for (o, out) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim()..(o + 1) * layer.in_dim()];
                let mut acc = layer.biases[o];
                for (w, a) in row.iter().zip(&activation) {
                    acc += w * a;
                }
                *out = if k == last { acc } else { acc.tanh() };
            }
            activation = next;
        }
        scaling.unscale_output(activation[0])
    }
}

/// Shared per-batch quantities for the normalized-squared-error loss:
/// the target variance denominator, or the mean-squared-error fallback when
/// the targets carry (numerically) no variance.
struct BatchContext {
    /// Multiplier applied to each squared residual.
    inv_denom: f64,
    mse_fallback: bool,
}

impl BatchContext {
    fn new(samples: &[TrainingSample]) -> Result<Self, LossError> {
        if samples.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        let n = samples.len() as f64;
        let mean: f64 = samples.iter().map(|s| s.target).sum::<f64>() / n;
        let denom: f64 = samples.iter().map(|s| (s.target - mean) * (s.target - mean)).sum();
        if denom < VARIANCE_FLOOR {
            Ok(Self { inv_denom: 1.0 / n, mse_fallback: true })
        } else {
            Ok(Self { inv_denom: 1.0 / denom, mse_fallback: false })
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub loss: f64,
    pub mse_fallback: bool,
}

/// Loss of the network over a batch: sum of squared residuals divided by
/// the batch target variance (times n), or plain MSE when that variance is
/// numerically zero.
pub fn batch_loss(
    net: &AxisNetwork,
    scaling: &FeatureScaling,
    samples: &[TrainingSample],
) -> Result<BatchLoss, LossError> {
    let ctx = BatchContext::new(samples)?;
    let mut sum = 0.0;
    for s in samples {
        let r = net.forward(scaling, &s.features) - s.target;
        sum += r * r;
    }
    Ok(BatchLoss { loss: sum * ctx.inv_denom, mse_fallback: ctx.mse_fallback })
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub mse_fallback: bool,
}

/// Loss and its exact gradient with respect to every weight and bias,
/// accumulated by reverse-mode differentiation through the unscaling,
/// layers, and (parameter-free) scaling.
pub fn batch_gradient(
    net: &AxisNetwork,
    scaling: &FeatureScaling,
    samples: &[TrainingSample],
) -> Result<BatchGradient, LossError> {
    let ctx = BatchContext::new(samples)?;
    let n_layers = net.layers.len();
    let mut grad_w: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let mut grad_b: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect();
    // activations[0] is the scaled input; activations[k+1] the output of
    // layer k (post-tanh for hidden layers, raw for the last).
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    let mut loss = 0.0;

    for s in samples {
        activations.clear();
        activations.push(scaling.scale(&s.features).to_vec());
        for (k, layer) in net.layers.iter().enumerate() {
            let prev = &activations[k];
            let mut next = vec![0.0; layer.out_dim()];
            for (o, out) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim()..(o + 1) * layer.in_dim()];
                let mut acc = layer.biases[o];
                for (w, a) in row.iter().zip(prev) {
                    acc += w * a;
                }
                *out = if k == n_layers - 1 { acc } else { acc.tanh() };
            }
            activations.push(next);
        }

        let prediction = scaling.unscale_output(activations[n_layers][0]);
        let residual = prediction - s.target;
        loss += residual * residual;

        // d(loss)/d(raw output) for this sample.
        let mut delta = vec![2.0 * residual * ctx.inv_denom * scaling.output_std];
        for k in (0..n_layers).rev() {
            let layer = &net.layers[k];
            let prev = &activations[k];
            let gw = &mut grad_w[k];
            let gb = &mut grad_b[k];
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                let row = &mut gw[o * layer.in_dim()..(o + 1) * layer.in_dim()];
                for (g, a) in row.iter_mut().zip(prev) {
                    *g += d * a;
                }
            }
            if k > 0 {
                let mut prev_delta = vec![0.0; layer.in_dim()];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.in_dim()..(o + 1) * layer.in_dim()];
                    for (pd, w) in prev_delta.iter_mut().zip(row) {
                        *pd += w * d;
                    }
                }
                // Through the producing layer's tanh.
                for (pd, a) in prev_delta.iter_mut().zip(&activations[k]) {
                    *pd *= 1.0 - a * a;
                }
                delta = prev_delta;
            }
        }
    }

    let mut gradient = Vec::with_capacity(net.param_count());
    for (gw, gb) in grad_w.into_iter().zip(grad_b) {
        gradient.extend(gw);
        gradient.extend(gb);
    }
    Ok(BatchGradient { loss: loss * ctx.inv_denom, gradient, mse_fallback: ctx.mse_fallback })
}

/// Trainer knobs shared by the offline and in-flight paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Candidates drawn by the random-search initializer.
    pub random_search_candidates: usize,
    /// Iteration cap for offline training.
    pub offline_iterations: usize,
    /// Gradient-norm convergence tolerance.
    pub gradient_tolerance: f64,
    pub line_search: LineSearchParams,
    /// Iteration cap per in-flight update.
    pub online_iterations: usize,
    /// Wall-clock budget per in-flight update, ms.
    pub online_budget_ms: f64,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            random_search_candidates: 32,
            offline_iterations: 200,
            gradient_tolerance: 1e-7,
            line_search: LineSearchParams::default(),
            online_iterations: 2,
            online_budget_ms: 6.0,
            seed: 42,
        }
    }
}

impl TrainerConfig {
    pub fn offline_bfgs(&self) -> BfgsConfig {
        BfgsConfig {
            max_iterations: self.offline_iterations,
            gradient_tolerance: self.gradient_tolerance,
            line_search: self.line_search,
            deadline: None,
        }
    }

    pub fn online_bfgs(&self, deadline: std::time::Instant) -> BfgsConfig {
        BfgsConfig {
            max_iterations: self.online_iterations,
            gradient_tolerance: self.gradient_tolerance,
            line_search: self.line_search,
            deadline: Some(deadline),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.random_search_candidates == 0 {
            return Err("random search needs at least one candidate".into());
        }
        if self.offline_iterations == 0 || self.online_iterations == 0 {
            return Err("iteration caps must be at least 1".into());
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err("gradient tolerance must be positive".into());
        }
        if !(self.online_budget_ms > 0.0) {
            return Err("online budget must be positive".into());
        }
        self.line_search.validate()
    }
}

/// Draws `candidates` uniform parameter vectors in [-0.5, 0.5] from the
/// given generator and keeps the one with the lowest batch loss on a fixed,
/// evenly-strided evaluation subset (capped at 2048 samples).
pub fn init_random_search<R: Rng>(
    arch: Architecture,
    scaling: &FeatureScaling,
    samples: &[TrainingSample],
    candidates: usize,
    rng: &mut R,
) -> Result<(AxisNetwork, f64), LossError> {
    assert!(candidates >= 1);
    if samples.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let stride = samples.len().div_ceil(2048).max(1);
    let subset: Vec<TrainingSample> = samples.iter().copied().step_by(stride).collect();

    let n_params = arch.param_count();
    let mut best: Option<(AxisNetwork, f64)> = None;
    for _ in 0..candidates {
        let params: Vec<f64> = (0..n_params).map(|_| rng.random_range(-0.5..=0.5)).collect();
        let net = AxisNetwork::from_params(arch, &params);
        let loss = batch_loss(&net, scaling, &subset)?.loss;
        if best.as_ref().is_none_or(|(_, b)| loss < *b) {
            best = Some((net, loss));
        }
    }
    Ok(best.expect("candidates >= 1"))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: AxisNetwork,
    /// Batch loss at the start and after each accepted step.
    pub loss_history: Vec<f64>,
    pub iterations: usize,
    pub status: BfgsStatus,
    pub mse_fallback: bool,
}

/// Runs the quasi-Newton minimizer on the batch loss, starting from the
/// given network. Returns the trained copy; the input is untouched.
pub fn train_quasi_newton(
    net: &AxisNetwork,
    scaling: &FeatureScaling,
    samples: &[TrainingSample],
    bfgs: &BfgsConfig,
) -> Result<TrainOutcome, LossError> {
    // Surface the empty-batch case eagerly; the closure below would
    // otherwise hide it behind a panic.
    let ctx_probe = BatchContext::new(samples)?;
    let mse_fallback = ctx_probe.mse_fallback;

    let mut scratch = net.clone();
    let objective = |params: &[f64]| -> (f64, Vec<f64>) {
        scratch.set_params(params);
        let eval = batch_gradient(&scratch, scaling, samples).expect("batch checked nonempty");
        (eval.loss, eval.gradient)
    };
    let outcome = minimize(objective, net.params(), bfgs);
    Ok(TrainOutcome {
        network: AxisNetwork::from_params(net.arch, &outcome.position),
        loss_history: outcome.loss_history,
        iterations: outcome.iterations,
        status: outcome.status,
        mse_fallback,
    })
}
