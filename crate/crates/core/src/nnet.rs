//! From-scratch fully connected networks: width-scaled initialization,
//! manual backpropagation, and classic-momentum SGD / full-batch GD.
//!
//! Training a single network is strictly sequential; all randomness comes
//! from the caller's [`RngStream`]s, so a `(data, init, shuffle)` stream
//! triple determines the final parameters bit for bit.

use thiserror::Error;

use crate::datasets::{Dataset, TaskKind};
use crate::numkit::{Matrix, NumError, RngStream};

/// Loss values above this are treated as divergence even while finite, so
/// that wide sweeps fail loudly per cell instead of poisoning the grid.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss incompatible with data or output map: {0}")]
    Incompatible(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMap {
    Identity,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    SquaredError,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batch {
    Full,
    Size(usize),
}

/// Architecture of a fully connected network. `hidden_widths` may be empty,
/// which degenerates to a single linear map (used to bridge the trainer to
/// the linear-model closed forms).
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub output_map: OutputMap,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(TrainError::InvalidSpec(
                "input and output dimensions must be >= 1".into(),
            ));
        }
        if self.hidden_widths.contains(&0) {
            return Err(TrainError::InvalidSpec("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Layer dimensions from input to output.
    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.output_dim);
        dims
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// `fan_in x fan_out`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }
}

/// Per-layer gradients, same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub step_size: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: Batch,
    pub loss: Loss,
    pub stop_train_loss: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "step_size must be finite and >= 0, got {}",
                self.step_size
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if let Batch::Size(0) = self.batch {
            return Err(TrainError::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Width-scaled initialization: every weight and bias is uniform with
/// variance `1 / fan_in`, i.e. on `[-sqrt(3/fan_in), sqrt(3/fan_in)]`.
pub fn init_params(spec: &MlpSpec, stream: &mut RngStream) -> Result<MlpParams, TrainError> {
    spec.validate()?;
    let dims = spec.dims();
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (3.0 / fan_in as f64).sqrt();
        let w = stream.uniform(fan_in * fan_out, -bound, bound)?;
        let b = stream.uniform(fan_out, -bound, bound)?;
        layers.push(Layer {
            weight: Matrix::new(fan_in, fan_out, w)?,
            bias: b,
        });
    }
    Ok(MlpParams { layers })
}

fn apply_activation(act: Activation, z: &mut [f64]) {
    match act {
        Activation::Relu => {
            for v in z.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for v in z.iter_mut() {
                *v = v.tanh();
            }
        }
    }
}

/// Derivative of the activation expressed through the *post*-activation
/// value (valid for both relu and tanh).
fn activation_deriv_from_output(act: Activation, a: f64) -> f64 {
    match act {
        Activation::Relu => {
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - a * a,
    }
}

fn softmax_rows(rows: usize, cols: usize, z: &mut [f64]) {
    for r in 0..rows {
        let row = &mut z[r * cols..(r + 1) * cols];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `input` is `b x d_in` row-major; result is `b x d_out`.
fn affine(input: &[f64], b: usize, d_in: usize, layer: &Layer) -> Vec<f64> {
    let d_out = layer.bias.len();
    let mut out = vec![0.0; b * d_out];
    let w = layer.weight.values();
    for r in 0..b {
        let in_row = &input[r * d_in..(r + 1) * d_in];
        let out_row = &mut out[r * d_out..(r + 1) * d_out];
        out_row.copy_from_slice(&layer.bias);
        for (k, &x) in in_row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let w_row = &w[k * d_out..(k + 1) * d_out];
            for j in 0..d_out {
                out_row[j] += x * w_row[j];
            }
        }
    }
    out
}

struct ForwardTrace {
    /// `activations[0]` is the input batch; `activations[l]` the output of
    /// layer `l` after its nonlinearity (or output map for the last layer).
    activations: Vec<Vec<f64>>,
    batch: usize,
}

fn forward_trace(
    params: &MlpParams,
    spec: &MlpSpec,
    x: &Matrix,
) -> Result<ForwardTrace, TrainError> {
    if x.cols() != spec.input_dim {
        return Err(TrainError::Shape(format!(
            "input has {} columns, spec expects {}",
            x.cols(),
            spec.input_dim
        )));
    }
    if params.layers.len() != spec.hidden_widths.len() + 1 {
        return Err(TrainError::Shape(format!(
            "params have {} layers, spec expects {}",
            params.layers.len(),
            spec.hidden_widths.len() + 1
        )));
    }
    let b = x.rows();
    let n_layers = params.layers.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    activations.push(x.values().to_vec());
    let dims = spec.dims();
    for (l, layer) in params.layers.iter().enumerate() {
        if layer.weight.rows() != dims[l] || layer.weight.cols() != dims[l + 1] {
            return Err(TrainError::Shape(format!(
                "layer {l} weight is {}x{}, spec expects {}x{}",
                layer.weight.rows(),
                layer.weight.cols(),
                dims[l],
                dims[l + 1]
            )));
        }
        let mut z = affine(&activations[l], b, dims[l], layer);
        if l + 1 < n_layers {
            apply_activation(spec.activation, &mut z);
        } else if spec.output_map == OutputMap::Softmax {
            softmax_rows(b, dims[l + 1], &mut z);
        }
        activations.push(z);
    }
    Ok(ForwardTrace {
        activations,
        batch: b,
    })
}

/// Batch of predictions, one row per input row. Softmax rows sum to one.
pub fn forward(params: &MlpParams, spec: &MlpSpec, x: &Matrix) -> Result<Matrix, TrainError> {
    let trace = forward_trace(params, spec, x)?;
    let out = trace.activations.into_iter().last().expect("nonempty");
    Ok(Matrix::new(x.rows(), spec.output_dim, out)?)
}

/// Smallest `|preactivation|` over all hidden units in the batch. Used by
/// finite-difference tests to reject relu configurations sitting on a kink.
pub fn min_abs_preactivation(
    params: &MlpParams,
    spec: &MlpSpec,
    x: &Matrix,
) -> Result<f64, TrainError> {
    if spec.hidden_widths.is_empty() {
        return Ok(f64::INFINITY);
    }
    let b = x.rows();
    let dims = spec.dims();
    let mut current = x.values().to_vec();
    let mut min_abs = f64::INFINITY;
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(&current, b, dims[l], layer);
        if l + 1 < params.layers.len() {
            for &v in &z {
                min_abs = min_abs.min(v.abs());
            }
            let mut a = z;
            apply_activation(spec.activation, &mut a);
            current = a;
        } else {
            break;
        }
    }
    Ok(min_abs)
}

fn check_loss_compat(spec: &MlpSpec, loss: Loss) -> Result<(), TrainError> {
    if loss == Loss::CrossEntropy && spec.output_map != OutputMap::Softmax {
        return Err(TrainError::Incompatible(
            "cross-entropy needs softmax outputs".into(),
        ));
    }
    Ok(())
}

/// Mean loss over the batch: squared error sums over output components and
/// averages over rows; cross-entropy averages `-sum y ln p` over rows.
pub fn batch_loss(
    params: &MlpParams,
    spec: &MlpSpec,
    x: &Matrix,
    y: &Matrix,
    loss: Loss,
) -> Result<f64, TrainError> {
    check_loss_compat(spec, loss)?;
    let preds = forward(params, spec, x)?;
    loss_from_predictions(&preds, y, loss)
}

fn loss_from_predictions(preds: &Matrix, y: &Matrix, loss: Loss) -> Result<f64, TrainError> {
    if preds.rows() != y.rows() || preds.cols() != y.cols() {
        return Err(TrainError::Shape(format!(
            "predictions {}x{} vs targets {}x{}",
            preds.rows(),
            preds.cols(),
            y.rows(),
            y.cols()
        )));
    }
    let b = preds.rows();
    let mut total = 0.0;
    match loss {
        Loss::SquaredError => {
            for (p, t) in preds.values().iter().zip(y.values()) {
                let d = p - t;
                total += d * d;
            }
        }
        Loss::CrossEntropy => {
            for (p, t) in preds.values().iter().zip(y.values()) {
                if *t != 0.0 {
                    total -= t * p.max(1e-300).ln();
                }
            }
        }
    }
    Ok(total / b as f64)
}

/// Loss and its gradient with respect to every parameter, by reverse-mode
/// accumulation through the cached forward pass.
pub fn loss_and_grad(
    params: &MlpParams,
    spec: &MlpSpec,
    x: &Matrix,
    y: &Matrix,
    loss: Loss,
) -> Result<(f64, MlpGrad), TrainError> {
    check_loss_compat(spec, loss)?;
    if y.cols() != spec.output_dim || y.rows() != x.rows() {
        return Err(TrainError::Shape(format!(
            "targets {}x{} vs expected {}x{}",
            y.rows(),
            y.cols(),
            x.rows(),
            spec.output_dim
        )));
    }
    let trace = forward_trace(params, spec, x)?;
    let b = trace.batch;
    let k = spec.output_dim;
    let preds = trace.activations.last().expect("nonempty");
    let loss_value = {
        let pm = Matrix::new(b, k, preds.clone())?;
        loss_from_predictions(&pm, y, loss)?
    };

    // Delta at the output layer's preactivation.
    let inv_b = 1.0 / b as f64;
    let mut delta = vec![0.0; b * k];
    match (loss, spec.output_map) {
        (Loss::SquaredError, OutputMap::Identity) => {
            for i in 0..b * k {
                delta[i] = 2.0 * (preds[i] - y.values()[i]) * inv_b;
            }
        }
        (Loss::SquaredError, OutputMap::Softmax) => {
            // dL/dz = p .* (g - <g, p>) with g = dL/dp.
            for r in 0..b {
                let p = &preds[r * k..(r + 1) * k];
                let t = &y.values()[r * k..(r + 1) * k];
                let g: Vec<f64> = (0..k).map(|j| 2.0 * (p[j] - t[j]) * inv_b).collect();
                let gp: f64 = (0..k).map(|j| g[j] * p[j]).sum();
                for j in 0..k {
                    delta[r * k + j] = p[j] * (g[j] - gp);
                }
            }
        }
        (Loss::CrossEntropy, OutputMap::Softmax) => {
            for i in 0..b * k {
                delta[i] = (preds[i] - y.values()[i]) * inv_b;
            }
        }
        (Loss::CrossEntropy, OutputMap::Identity) => unreachable!("rejected above"),
    }

    let n_layers = params.layers.len();
    let dims = spec.dims();
    let mut grad_w: Vec<Vec<f64>> = params
        .layers
        .iter()
        .map(|l| vec![0.0; l.weight.rows() * l.weight.cols()])
        .collect();
    let mut grad_b: Vec<Vec<f64>> = params
        .layers
        .iter()
        .map(|l| vec![0.0; l.bias.len()])
        .collect();

    let mut delta_cur = delta;
    for l in (0..n_layers).rev() {
        let d_in = dims[l];
        let d_out = dims[l + 1];
        let a_prev = &trace.activations[l];
        // Weight and bias gradients.
        {
            let gw = &mut grad_w[l];
            let gb = &mut grad_b[l];
            for r in 0..b {
                let a_row = &a_prev[r * d_in..(r + 1) * d_in];
                let d_row = &delta_cur[r * d_out..(r + 1) * d_out];
                for j in 0..d_out {
                    gb[j] += d_row[j];
                }
                for (i, &a) in a_row.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let gw_row = &mut gw[i * d_out..(i + 1) * d_out];
                    for j in 0..d_out {
                        gw_row[j] += a * d_row[j];
                    }
                }
            }
        }
        // Propagate to the previous layer through W^T and the activation.
        if l > 0 {
            let w = params.layers[l].weight.values();
            let mut delta_prev = vec![0.0; b * d_in];
            for r in 0..b {
                let d_row = &delta_cur[r * d_out..(r + 1) * d_out];
                let dp_row = &mut delta_prev[r * d_in..(r + 1) * d_in];
                for i in 0..d_in {
                    let w_row = &w[i * d_out..(i + 1) * d_out];
                    let mut s = 0.0;
                    for j in 0..d_out {
                        s += w_row[j] * d_row[j];
                    }
                    dp_row[i] = s;
                }
                let a_row = &trace.activations[l][r * d_in..(r + 1) * d_in];
                for i in 0..d_in {
                    dp_row[i] *= activation_deriv_from_output(spec.activation, a_row[i]);
                }
            }
            delta_cur = delta_prev;
        }
    }

    Ok((
        loss_value,
        MlpGrad {
            weights: grad_w,
            biases: grad_b,
        },
    ))
}

/// Classic momentum training: `v <- mu v - eta grad`, `theta <- theta + v`,
/// with per-epoch reshuffling when minibatching. Returns the final
/// parameters and the per-epoch mean training loss curve.
pub fn train(
    spec: &MlpSpec,
    params: MlpParams,
    data: &Dataset,
    cfg: &TrainConfig,
    shuffle_stream: &mut RngStream,
) -> Result<(MlpParams, Vec<f64>), TrainError> {
    spec.validate()?;
    cfg.validate()?;
    check_loss_compat(spec, cfg.loss)?;
    if cfg.loss == Loss::CrossEntropy && data.kind() != TaskKind::Classification {
        return Err(TrainError::Incompatible(
            "cross-entropy needs one-hot classification targets".into(),
        ));
    }
    if data.input_dim() != spec.input_dim || data.target_dim() != spec.output_dim {
        return Err(TrainError::Shape(format!(
            "data is {}->{} but spec is {}->{}",
            data.input_dim(),
            data.target_dim(),
            spec.input_dim,
            spec.output_dim
        )));
    }
    let m = data.len();
    let batch = match cfg.batch {
        Batch::Full => m,
        Batch::Size(s) => {
            if s > m {
                return Err(TrainError::InvalidConfig(format!(
                    "batch size {s} exceeds dataset size {m}"
                )));
            }
            s
        }
    };

    let mut params = params;
    let mut vel_w: Vec<Vec<f64>> = params
        .layers
        .iter()
        .map(|l| vec![0.0; l.weight.rows() * l.weight.cols()])
        .collect();
    let mut vel_b: Vec<Vec<f64>> = params
        .layers
        .iter()
        .map(|l| vec![0.0; l.bias.len()])
        .collect();

    let d = data.input_dim();
    let k = data.target_dim();
    let mut order: Vec<usize> = (0..m).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if batch < m {
            shuffle_stream.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let mut xs = Vec::with_capacity(chunk.len() * d);
            let mut ys = Vec::with_capacity(chunk.len() * k);
            for &i in chunk {
                xs.extend_from_slice(data.inputs().row(i));
                ys.extend_from_slice(data.targets().row(i));
            }
            let x = Matrix::new(chunk.len(), d, xs)?;
            let y = Matrix::new(chunk.len(), k, ys)?;
            let (loss, grad) = match loss_and_grad(&params, spec, &x, &y, cfg.loss) {
                Ok(pair) => pair,
                Err(TrainError::Num(NumError::NonFinite(_))) => {
                    return Err(TrainError::Diverged { epoch })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
                return Err(TrainError::Diverged { epoch });
            }
            for l in 0..params.layers.len() {
                let w = params.layers[l].weight.values_mut();
                for (i, g) in grad.weights[l].iter().enumerate() {
                    vel_w[l][i] = cfg.momentum * vel_w[l][i] - cfg.step_size * g;
                    w[i] += vel_w[l][i];
                }
                let bias = &mut params.layers[l].bias;
                for (i, g) in grad.biases[l].iter().enumerate() {
                    vel_b[l][i] = cfg.momentum * vel_b[l][i] - cfg.step_size * g;
                    bias[i] += vel_b[l][i];
                }
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let epoch_loss = loss_sum / m as f64;
        if !epoch_loss.is_finite() || epoch_loss > DIVERGENCE_THRESHOLD {
            return Err(TrainError::Diverged { epoch });
        }
        curve.push(epoch_loss);
        if let Some(stop) = cfg.stop_train_loss {
            if epoch_loss <= stop {
                break;
            }
        }
    }
    Ok((params, curve))
}

/// Fraction of points whose true-class score is strictly below the row
/// maximum; ties count as correct.
pub fn zero_one_error(
    params: &MlpParams,
    spec: &MlpSpec,
    data: &Dataset,
) -> Result<f64, TrainError> {
    if data.kind() != TaskKind::Classification {
        return Err(TrainError::Incompatible(
            "zero-one error needs a classification dataset".into(),
        ));
    }
    let preds = forward(params, spec, data.inputs())?;
    Ok(zero_one_from_predictions(&preds, data.targets()))
}

/// Zero-one error from precomputed prediction rows against one-hot targets.
pub fn zero_one_from_predictions(preds: &Matrix, targets: &Matrix) -> f64 {
    debug_assert_eq!(preds.rows(), targets.rows());
    debug_assert_eq!(preds.cols(), targets.cols());
    let mut wrong = 0usize;
    for r in 0..preds.rows() {
        let t = targets.row(r);
        let p = preds.row(r);
        let label = t
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot target row");
        let max = p.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if p[label] < max {
            wrong += 1;
        }
    }
    wrong as f64 / preds.rows() as f64
}

/// Mean squared error (summed over output components) from predictions.
pub fn mse_from_predictions(preds: &Matrix, targets: &Matrix) -> f64 {
    debug_assert_eq!(preds.rows(), targets.rows());
    let mut total = 0.0;
    for (p, t) in preds.values().iter().zip(targets.values()) {
        let d = p - t;
        total += d * d;
    }
    total / preds.rows() as f64
}

/// Mean squared error of the network on a dataset.
pub fn mean_squared_error(
    params: &MlpParams,
    spec: &MlpSpec,
    data: &Dataset,
) -> Result<f64, TrainError> {
    let preds = forward(params, spec, data.inputs())?;
    Ok(mse_from_predictions(&preds, data.targets()))
}

/// Compare the analytic gradient against central finite differences of the
/// loss, returning the worst relative error over all parameters. The
/// denominator is floored at 1 so near-zero gradients are judged on
/// absolute scale.
pub fn gradient_check_max_rel_err(
    spec: &MlpSpec,
    params: &MlpParams,
    x: &Matrix,
    y: &Matrix,
    loss: Loss,
    eps: f64,
) -> Result<f64, TrainError> {
    let (_, grad) = loss_and_grad(params, spec, x, y, loss)?;
    let mut work = params.clone();
    let mut worst: f64 = 0.0;

    for l in 0..work.layers.len() {
        let n_w = work.layers[l].weight.values().len();
        for i in 0..n_w {
            let orig = work.layers[l].weight.values()[i];
            work.layers[l].weight.values_mut()[i] = orig + eps;
            let up = batch_loss(&work, spec, x, y, loss)?;
            work.layers[l].weight.values_mut()[i] = orig - eps;
            let down = batch_loss(&work, spec, x, y, loss)?;
            work.layers[l].weight.values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grad.weights[l][i];
            let denom = analytic.abs().max(numeric.abs()).max(1.0);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
        for i in 0..work.layers[l].bias.len() {
            let orig = work.layers[l].bias[i];
            work.layers[l].bias[i] = orig + eps;
            let up = batch_loss(&work, spec, x, y, loss)?;
            work.layers[l].bias[i] = orig - eps;
            let down = batch_loss(&work, spec, x, y, loss)?;
            work.layers[l].bias[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grad.biases[l][i];
            let denom = analytic.abs().max(numeric.abs()).max(1.0);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
