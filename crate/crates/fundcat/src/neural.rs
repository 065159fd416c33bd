//! Feed-forward classifier: fully connected ReLU hidden layers (512/256/128
//! by default), softmax output, categorical cross-entropy, Adam updates, and
//! holdout-based early stopping with best-epoch parameter retention.
//!
//! Training is a single logical sequence of seeded steps; matrix products use
//! the default single-threaded kernels, so a run is bitwise reproducible
//! given `(seed, config, data)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;
use crate::sampling;
use crate::seeding::{child_seed, component_rng};

/// Probabilities are clamped here before the log in the loss; the gradient
/// uses the exact softmax cross-entropy form.
const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_HIDDEN_DIMS: [usize; 3] = [512, 256, 128];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl MlpArchitecture {
    /// The default three-hidden-layer stack for `input_dim` features and
    /// `output_dim` categories.
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        MlpArchitecture {
            input_dim,
            hidden_dims: DEFAULT_HIDDEN_DIMS.to_vec(),
            output_dim,
        }
    }

    pub fn with_hidden_dims(mut self, hidden_dims: &[usize]) -> Self {
        self.hidden_dims = hidden_dims.to_vec();
        self
    }

    /// Layer dimensions as (fan_in, fan_out) pairs, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(self.output_dim));
        for dim in all {
            if dim == 0 {
                return Err(Error::InvalidParam("all layer dimensions must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One affine layer: `weights` is fan_in x fan_out.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParameters {
    pub layers: Vec<DenseLayer>,
}

/// Gradients mirror the parameter shapes.
pub type MlpGradients = MlpParameters;

/// He-normal initialization: weights from N(0, 2/fan_in), biases zero.
/// Sampling order is fixed (layer by layer, row-major), so equal seeds give
/// bitwise-identical parameters.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> Result<MlpParameters> {
    arch.validate()?;
    let mut rng = component_rng(seed, "mlp_init", 0);
    let mut layers = Vec::new();
    for (fan_in, fan_out) in arch.layer_dims() {
        let std_dev = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std_dev).expect("valid std dev");
        let mut weights = Array2::zeros((fan_in, fan_out));
        for w in weights.iter_mut() {
            *w = normal.sample(&mut rng);
        }
        layers.push(DenseLayer {
            weights,
            bias: Array1::zeros(fan_out),
        });
    }
    Ok(MlpParameters { layers })
}

/// Row-wise softmax with max subtraction for overflow safety.
fn softmax_inplace(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
}

fn affine(input: &Array2<f64>, layer: &DenseLayer) -> Array2<f64> {
    let mut out = input.dot(&layer.weights);
    out += &layer.bias;
    out
}

/// Hidden activations (post-ReLU) per layer plus the output probabilities.
struct ForwardTrace {
    hidden: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

fn forward_trace(params: &MlpParameters, batch: &Array2<f64>) -> ForwardTrace {
    let n_hidden = params.layers.len() - 1;
    let mut hidden = Vec::with_capacity(n_hidden);
    let mut current = batch.clone();
    for layer in &params.layers[..n_hidden] {
        let mut z = affine(&current, layer);
        z.mapv_inplace(|v| v.max(0.0));
        hidden.push(z.clone());
        current = z;
    }
    let mut logits = affine(&current, &params.layers[n_hidden]);
    softmax_inplace(&mut logits);
    ForwardTrace {
        hidden,
        probs: logits,
    }
}

/// Forward pass: affine + ReLU through the hidden stack, affine + softmax at
/// the output. Every row of the result sums to one.
pub fn forward(params: &MlpParameters, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let expected = params.layers[0].weights.nrows();
    if batch.ncols() != expected {
        return Err(Error::WidthMismatch {
            expected,
            got: batch.ncols(),
        });
    }
    Ok(forward_trace(params, &batch.to_owned()).probs)
}

/// Weighted mean cross-entropy and its gradients by reverse-mode
/// differentiation. `class_weights`, when given, maps each label to its
/// sample weight; uniform weights reduce to the plain mean.
pub fn loss_and_gradients(
    params: &MlpParameters,
    batch: &Array2<f64>,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(f64, MlpGradients)> {
    let expected = params.layers[0].weights.nrows();
    if batch.ncols() != expected {
        return Err(Error::WidthMismatch {
            expected,
            got: batch.ncols(),
        });
    }
    let n = batch.nrows();
    assert_eq!(labels.len(), n, "one label per batch row");

    let trace = forward_trace(params, batch);
    let sample_weight =
        |i: usize| class_weights.map_or(1.0, |weights| weights[labels[i]]);
    let weight_total: f64 = (0..n).map(sample_weight).sum();

    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let p = trace.probs[(i, label)].max(PROB_FLOOR);
        loss -= sample_weight(i) * p.ln();
    }
    loss /= weight_total;
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }

    // d loss / d logits = w_i (p - onehot) / sum w
    let mut delta = trace.probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        delta[(i, label)] -= 1.0;
        let scale = sample_weight(i) / weight_total;
        delta.row_mut(i).mapv_inplace(|v| v * scale);
    }

    let n_layers = params.layers.len();
    let mut gradients: Vec<DenseLayer> = params
        .layers
        .iter()
        .map(|layer| DenseLayer {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        })
        .collect();

    for layer_idx in (0..n_layers).rev() {
        let input: &Array2<f64> = if layer_idx == 0 {
            batch
        } else {
            &trace.hidden[layer_idx - 1]
        };
        gradients[layer_idx].weights = input.t().dot(&delta);
        gradients[layer_idx].bias = delta.sum_axis(Axis(0));
        if layer_idx > 0 {
            let mut upstream = delta.dot(&params.layers[layer_idx].weights.t());
            // ReLU mask: activations are zero exactly where the unit was off
            upstream
                .iter_mut()
                .zip(trace.hidden[layer_idx - 1].iter())
                .for_each(|(g, &a)| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            delta = upstream;
        }
    }

    Ok((loss, MlpParameters { layers: gradients }))
}

/// Adam optimizer state: first/second moment accumulators, step counter and
/// hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<DenseLayer>,
    v: Vec<DenseLayer>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &MlpParameters, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || -> Vec<DenseLayer> {
            params
                .layers
                .iter()
                .map(|layer| DenseLayer {
                    weights: Array2::zeros(layer.weights.raw_dim()),
                    bias: Array1::zeros(layer.bias.raw_dim()),
                })
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One Adam update:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, bias correction by
/// `(1 - b^t)`, then `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(state: &mut AdamState, params: &mut MlpParameters, gradients: &MlpGradients) {
    state.t += 1;
    let m_corr = 1.0 - state.beta1.powi(state.t as i32);
    let v_corr = 1.0 - state.beta2.powi(state.t as i32);

    for ((layer, m), (v, grad)) in params
        .layers
        .iter_mut()
        .zip(&mut state.m)
        .zip(state.v.iter_mut().zip(&gradients.layers))
    {
        update_tensor(
            layer.weights.iter_mut(),
            m.weights.iter_mut(),
            v.weights.iter_mut(),
            grad.weights.iter(),
            state.lr,
            state.beta1,
            state.beta2,
            state.epsilon,
            m_corr,
            v_corr,
        );
        update_tensor(
            layer.bias.iter_mut(),
            m.bias.iter_mut(),
            v.bias.iter_mut(),
            grad.bias.iter(),
            state.lr,
            state.beta1,
            state.beta2,
            state.epsilon,
            m_corr,
            v_corr,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn update_tensor<'a>(
    params: impl Iterator<Item = &'a mut f64>,
    m: impl Iterator<Item = &'a mut f64>,
    v: impl Iterator<Item = &'a mut f64>,
    grads: impl Iterator<Item = &'a f64>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m_corr: f64,
    v_corr: f64,
) {
    for (((p, m), v), &g) in params.zip(m).zip(v).zip(grads) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / m_corr;
        let v_hat = *v / v_corr;
        *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Per-category loss weights; `None` trains unweighted.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 10,
            seed: 0,
            class_weights: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub arch: MlpArchitecture,
    /// Parameters from the best-validation-loss epoch.
    pub params: MlpParameters,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl MlpModel {
    pub fn predict_proba(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        forward(&self.params, rows)
    }
}

/// Trains with mini-batch Adam on a stratified holdout: `holdout_frac` of the
/// rows become the validation set, epochs shuffle with per-epoch seeds, and
/// the parameters of the best validation epoch are retained. Stops early
/// after `patience` epochs without improvement.
pub fn fit_mlp(matrix: &DesignMatrix, config: &TrainConfig, holdout_frac: f64) -> Result<MlpModel> {
    if config.batch_size == 0 || config.patience == 0 || config.epochs == 0 {
        return Err(Error::InvalidParam(
            "epochs, batch_size and patience must be >= 1".into(),
        ));
    }
    let n_categories = matrix.labels.iter().copied().max().map_or(0, |m| m + 1);
    let arch = MlpArchitecture::new(matrix.n_columns(), n_categories);
    fit_mlp_with_arch(matrix, config, holdout_frac, arch)
}

/// [`fit_mlp`] with an explicit architecture (used by tests and examples
/// with tiny hidden stacks).
pub fn fit_mlp_with_arch(
    matrix: &DesignMatrix,
    config: &TrainConfig,
    holdout_frac: f64,
    arch: MlpArchitecture,
) -> Result<MlpModel> {
    if arch.input_dim != matrix.n_columns() {
        return Err(Error::WidthMismatch {
            expected: arch.input_dim,
            got: matrix.n_columns(),
        });
    }
    if let Some(weights) = &config.class_weights {
        if weights.len() < arch.output_dim {
            return Err(Error::InvalidParam(format!(
                "class_weights has {} entries for {} categories",
                weights.len(),
                arch.output_dim
            )));
        }
    }
    let all_rows: Vec<usize> = (0..matrix.n_rows()).collect();
    let (fit_rows, val_rows) = sampling::holdout(
        &all_rows,
        &matrix.labels,
        holdout_frac,
        child_seed(config.seed, "mlp_holdout", 0),
    )?;

    let gather = |rows: &[usize]| -> (Array2<f64>, Vec<usize>) {
        (
            matrix.values.select(Axis(0), rows),
            rows.iter().map(|&r| matrix.labels[r]).collect(),
        )
    };
    let (val_x, val_y) = gather(&val_rows);
    let class_weights = config.class_weights.as_deref();

    let mut params = init_params(&arch, child_seed(config.seed, "mlp_init_seed", 0))?;
    let mut adam = AdamState::new(&params, config.lr, config.beta1, config.beta2, config.epsilon);

    let mut history = Vec::new();
    let mut best: Option<(f64, MlpParameters, usize)> = None;
    let mut stale_epochs = 0usize;

    let mut order = fit_rows.clone();
    for epoch in 1..=config.epochs {
        use rand::seq::SliceRandom;
        let mut rng = component_rng(config.seed, "mlp_epoch", epoch as u64);
        order.shuffle(&mut rng);

        let mut train_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (batch_x, batch_y) = gather(chunk);
            let (loss, gradients) =
                loss_and_gradients(&params, &batch_x, &batch_y, class_weights)
                    .map_err(|e| at_epoch(e, epoch))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            adam_step(&mut adam, &mut params, &gradients);
            train_loss += loss;
            batches += 1;
        }
        train_loss /= batches as f64;

        let val_probs = forward(&params, val_x.view())?;
        let val_loss = mean_cross_entropy(&val_probs, &val_y, class_weights);
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let val_accuracy = accuracy_of(&val_probs, &val_y);
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });

        if best.as_ref().map_or(true, |(best_loss, _, _)| val_loss < *best_loss) {
            best = Some((val_loss, params.clone(), epoch));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                break;
            }
        }
    }

    let (_, best_params, best_epoch) = best.expect("at least one epoch ran");
    Ok(MlpModel {
        arch,
        params: best_params,
        history,
        best_epoch,
    })
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Divergence { .. } => Error::Divergence { epoch },
        other => other,
    }
}

fn mean_cross_entropy(probs: &Array2<f64>, labels: &[usize], class_weights: Option<&[f64]>) -> f64 {
    let mut loss = 0.0;
    let mut weight_total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let w = class_weights.map_or(1.0, |weights| weights[label]);
        loss -= w * probs[(i, label)].max(PROB_FLOOR).ln();
        weight_total += w;
    }
    loss / weight_total
}

fn accuracy_of(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let correct = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best == label
        })
        .count();
    correct as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> MlpArchitecture {
        MlpArchitecture::new(5, 3).with_hidden_dims(&[8, 4])
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let arch = tiny_arch();
        let a = init_params(&arch, 42).unwrap();
        let b = init_params(&arch, 42).unwrap();
        assert_eq!(a, b);
        for layer in &a.layers {
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
        assert_ne!(a, init_params(&arch, 43).unwrap());
    }

    #[test]
    fn init_variance_tracks_fan_in() {
        let arch = MlpArchitecture::new(512, 4).with_hidden_dims(&[512]);
        let params = init_params(&arch, 7).unwrap();
        let w = &params.layers[0].weights;
        let n = w.len() as f64;
        let mean: f64 = w.sum() / n;
        let var: f64 = w.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let target = 2.0 / 512.0;
        assert!(
            (var - target).abs() / target < 0.2,
            "variance {var} vs target {target}"
        );
    }

    #[test]
    fn all_zero_params_predict_uniform() {
        let arch = tiny_arch();
        let mut params = init_params(&arch, 1).unwrap();
        for layer in &mut params.layers {
            layer.weights.fill(0.0);
        }
        let batch = Array2::from_shape_fn((4, 5), |(i, j)| (i + j) as f64);
        let probs = forward(&params, batch.view()).unwrap();
        for row in probs.rows() {
            for &p in row {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let arch = tiny_arch();
        let params = init_params(&arch, 3).unwrap();
        let batch = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 7 + j) % 5) as f64 - 2.0);
        let probs = forward(&params, batch.view()).unwrap();
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }

        // adding a constant to the output bias shifts all logits equally
        let mut shifted = params.clone();
        let last = shifted.layers.len() - 1;
        shifted.layers[last].bias.mapv_inplace(|b| b + 100.0);
        let probs_shifted = forward(&shifted, batch.view()).unwrap();
        for (a, b) in probs.iter().zip(probs_shifted.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let params = init_params(&tiny_arch(), 1).unwrap();
        let batch = Array2::zeros((2, 4));
        assert!(matches!(
            forward(&params, batch.view()),
            Err(Error::WidthMismatch { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn uniform_predictor_loss_is_log_c() {
        let arch = MlpArchitecture::new(5, 4).with_hidden_dims(&[8]);
        let mut params = init_params(&arch, 1).unwrap();
        for layer in &mut params.layers {
            layer.weights.fill(0.0);
        }
        let batch = Array2::from_shape_fn((8, 5), |(i, j)| (i * j) as f64);
        let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let (loss, _) = loss_and_gradients(&params, &batch, &labels, None).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let arch = tiny_arch();
        let mut max_rel = 0.0f64;
        for draw in 0..20 {
            let params = init_params(&arch, 100 + draw).unwrap();
            let mut rng = component_rng(200 + draw, "fd_batch", 0);
            use rand::Rng;
            let batch = Array2::from_shape_fn((6, 5), |_| rng.gen::<f64>() * 2.0 - 1.0);
            let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();

            let (_, analytic) = loss_and_gradients(&params, &batch, &labels, None).unwrap();
            let h = 1e-5;
            for layer_idx in 0..params.layers.len() {
                for flat in 0..params.layers[layer_idx].weights.len() {
                    let probe = |delta: f64| {
                        let mut p = params.clone();
                        let w = p.layers[layer_idx].weights.as_slice_mut().unwrap();
                        w[flat] += delta;
                        loss_and_gradients(&p, &batch, &labels, None).unwrap().0
                    };
                    let numeric = (probe(h) - probe(-h)) / (2.0 * h);
                    let analytic_g = analytic.layers[layer_idx].weights.as_slice().unwrap()[flat];
                    let denom = analytic_g.abs().max(numeric.abs()).max(1e-6);
                    max_rel = max_rel.max((analytic_g - numeric).abs() / denom);
                }
            }
        }
        assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
    }

    #[test]
    fn weighted_loss_reduces_to_mean_with_unit_weights() {
        let arch = tiny_arch();
        let params = init_params(&arch, 5).unwrap();
        let batch = Array2::from_shape_fn((4, 5), |(i, j)| (i + 2 * j) as f64 / 10.0);
        let labels = vec![0, 1, 2, 1];
        let (plain, grad_plain) = loss_and_gradients(&params, &batch, &labels, None).unwrap();
        let (weighted, grad_weighted) =
            loss_and_gradients(&params, &batch, &labels, Some(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(plain, weighted);
        assert_eq!(grad_plain, grad_weighted);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let arch = tiny_arch();
        let mut params = init_params(&arch, 9).unwrap();
        let reference = params.clone();
        let zero = MlpParameters {
            layers: params
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        };
        let mut state = AdamState::new(&params, 1e-3, 0.9, 0.999, 1e-8);
        adam_step(&mut state, &mut params, &zero);
        assert_eq!(params, reference);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_about_lr() {
        // scalar case: m_hat = v_hat = 1 at t=1 for g=1
        let arch = MlpArchitecture {
            input_dim: 1,
            hidden_dims: vec![],
            output_dim: 1,
        };
        let mut params = init_params(&arch, 0).unwrap();
        let before = params.layers[0].weights[(0, 0)];
        let gradient = MlpParameters {
            layers: vec![DenseLayer {
                weights: Array2::from_elem((1, 1), 1.0),
                bias: Array1::zeros(1),
            }],
        };
        let mut state = AdamState::new(&params, 1e-3, 0.9, 0.999, 1e-8);
        adam_step(&mut state, &mut params, &gradient);
        let update = before - params.layers[0].weights[(0, 0)];
        assert!((update - 1e-3).abs() < 1e-8, "update {update}");
    }

    #[test]
    fn adam_first_step_bounded_by_lr_for_any_scale() {
        use rand::Rng;
        let arch = tiny_arch();
        let mut rng = component_rng(31, "adam_bound", 0);
        for _ in 0..50 {
            let mut params = init_params(&arch, 2).unwrap();
            let reference = params.clone();
            let scale = 10f64.powf(rng.gen_range(-6.0..6.0));
            let gradient = MlpParameters {
                layers: params
                    .layers
                    .iter()
                    .map(|l| DenseLayer {
                        weights: l.weights.mapv(|_| (rng.gen::<f64>() - 0.5) * scale),
                        bias: l.bias.mapv(|_| (rng.gen::<f64>() - 0.5) * scale),
                    })
                    .collect(),
            };
            let mut state = AdamState::new(&params, 1e-3, 0.9, 0.999, 1e-8);
            adam_step(&mut state, &mut params, &gradient);
            for (after, before) in params.layers.iter().zip(&reference.layers) {
                for (a, b) in after.weights.iter().zip(before.weights.iter()) {
                    assert!((a - b).abs() <= 1e-3 * (1.0 + 1e-6));
                }
            }
        }
    }

    fn blob_matrix(n_per_class: usize, seed: u64) -> DesignMatrix {
        use rand::Rng;
        let mut rng = component_rng(seed, "mlp_blobs", 0);
        let n = n_per_class * 2;
        let mut values = Array2::zeros((n, 5));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            let center = if class == 0 { 0.25 } else { 0.75 };
            for j in 0..5 {
                values[(i, j)] = center + 0.08 * (rng.gen::<f64>() - 0.5);
            }
            labels.push(class);
        }
        DesignMatrix {
            values,
            row_ids: (0..n).map(|i| format!("r{i}")).collect(),
            labels,
            column_names: (0..5).map(|j| format!("f{j}")).collect(),
        }
    }

    #[test]
    fn separable_blobs_reach_high_validation_accuracy() {
        let m = blob_matrix(60, 17);
        let config = TrainConfig {
            epochs: 50,
            batch_size: 16,
            seed: 5,
            ..TrainConfig::default()
        };
        let arch = MlpArchitecture::new(5, 2).with_hidden_dims(&[16, 8]);
        let model = fit_mlp_with_arch(&m, &config, 0.2, arch).unwrap();
        let last = model.history.last().unwrap();
        let best = model
            .history
            .iter()
            .map(|e| e.val_accuracy)
            .fold(0.0, f64::max);
        assert!(best >= 0.95, "best val accuracy {best}, last {last:?}");
    }

    #[test]
    fn training_loss_decreases_over_first_steps() {
        let m = blob_matrix(30, 23);
        let arch = MlpArchitecture::new(5, 2).with_hidden_dims(&[16, 8]);
        let mut params = init_params(&arch, 3).unwrap();
        let mut adam = AdamState::new(&params, 1e-3, 0.9, 0.999, 1e-8);
        let mut losses = Vec::new();
        for _ in 0..10 {
            let (loss, grads) =
                loss_and_gradients(&params, &m.values, &m.labels, None).unwrap();
            adam_step(&mut adam, &mut params, &grads);
            losses.push(loss);
        }
        assert!(
            losses.windows(2).all(|w| w[1] < w[0]),
            "losses not decreasing: {losses:?}"
        );
    }

    #[test]
    fn patience_one_without_improvement_stops_after_two_epochs() {
        // lr=0 keeps params frozen, so val loss never improves after the
        // first epoch and patience=1 stops at epoch 2.
        let m = blob_matrix(20, 29);
        let config = TrainConfig {
            epochs: 50,
            batch_size: 8,
            lr: 0.0,
            patience: 1,
            seed: 1,
            ..TrainConfig::default()
        };
        let arch = MlpArchitecture::new(5, 2).with_hidden_dims(&[8]);
        let model = fit_mlp_with_arch(&m, &config, 0.2, arch).unwrap();
        assert_eq!(model.history.len(), 2);
        assert_eq!(model.best_epoch, 1);
    }

    #[test]
    fn holdout_fraction_sizes_validation_set() {
        let m = blob_matrix(50, 37);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 32,
            seed: 2,
            ..TrainConfig::default()
        };
        let arch = MlpArchitecture::new(5, 2).with_hidden_dims(&[8]);
        let model = fit_mlp_with_arch(&m, &config, 0.10, arch).unwrap();
        // 10% of 100 rows, stratified: 5 per class
        assert!(model.history[0].val_accuracy >= 0.0);
        let (fit_rows, val_rows) = sampling::holdout(
            &(0..100).collect::<Vec<_>>(),
            &m.labels,
            0.10,
            child_seed(2, "mlp_holdout", 0),
        )
        .unwrap();
        assert_eq!(val_rows.len(), 10);
        assert_eq!(fit_rows.len(), 90);
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let m = blob_matrix(25, 41);
        let config = TrainConfig {
            epochs: 5,
            batch_size: 16,
            seed: 77,
            ..TrainConfig::default()
        };
        let arch = MlpArchitecture::new(5, 2).with_hidden_dims(&[12, 6]);
        let a = fit_mlp_with_arch(&m, &config, 0.2, arch.clone()).unwrap();
        let b = fit_mlp_with_arch(&m, &config, 0.2, arch).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        let probs_a = a.predict_proba(m.values.view()).unwrap();
        let probs_b = b.predict_proba(m.values.view()).unwrap();
        assert_eq!(probs_a, probs_b);
    }
}
