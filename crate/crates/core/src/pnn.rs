//! Fully connected network with a Gaussian output layer (mean head plus a
//! softplus sigma head), trained by minibatch Adam on the negative
//! log-likelihood with L2 weight decay on the weights only.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DesignMatrix;
use crate::dist::{GaussianParams, PredictiveDistribution, SIGMA_FLOOR};
use crate::error::{Error, Result};
pub use crate::optim::AdamState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPConfig {
    pub hidden: Vec<usize>,
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MLPConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            l2: 0.01,
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPModel {
    pub layers: Vec<Dense>,
    pub mu_head: Dense,
    pub sigma_head: Dense,
    pub input_dim: usize,
}

fn softplus(x: f64) -> f64 {
    // Stable for large |x|.
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1), guarded for tiny y.
    let y = y.max(1e-10);
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).max(1e-300).ln()
    }
}

fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

/// Glorot-uniform weights, zero biases, and a sigma-head bias chosen so the
/// initial sigma approximates the target standard deviation.
pub fn init_mlp(config: &MLPConfig, input_dim: usize, target_std: f64) -> Result<MLPModel> {
    if input_dim == 0 {
        return Err(Error::Data("input dimension must be at least 1".into()));
    }
    if config.hidden.iter().any(|&w| w == 0) {
        return Err(Error::Usage("hidden widths must be at least 1".into()));
    }
    if config.l2 < 0.0 {
        return Err(Error::Usage("l2 coefficient must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut layers = Vec::with_capacity(config.hidden.len());
    let mut fan_in = input_dim;
    for &width in &config.hidden {
        layers.push(Dense {
            w: glorot_uniform(fan_in, width, &mut rng),
            b: Array1::zeros(width),
        });
        fan_in = width;
    }
    let mu_head = Dense {
        w: glorot_uniform(fan_in, 1, &mut rng),
        b: Array1::zeros(1),
    };
    let mut sigma_head = Dense {
        w: glorot_uniform(fan_in, 1, &mut rng),
        b: Array1::zeros(1),
    };
    // Degenerate targets would start sigma at the hard floor, which makes the
    // initial NLL surface nearly singular; lift the starting point slightly.
    sigma_head.b[0] = softplus_inverse(target_std.max(0.05) - SIGMA_FLOOR);
    Ok(MLPModel {
        layers,
        mu_head,
        sigma_head,
        input_dim,
    })
}

struct ForwardPass {
    /// Post-ReLU activations per hidden layer; index 0 is the input batch.
    activations: Vec<Array2<f64>>,
    mu: Array1<f64>,
    sigma_raw: Array1<f64>,
    sigma: Array1<f64>,
}

fn forward_batch(model: &MLPModel, x: ArrayView2<'_, f64>) -> ForwardPass {
    let mut activations = vec![x.to_owned()];
    for layer in &model.layers {
        let mut z = activations.last().unwrap().dot(&layer.w);
        z += &layer.b;
        z.mapv_inplace(|v| v.max(0.0));
        activations.push(z);
    }
    let h = activations.last().unwrap();
    let mu = h.dot(&model.mu_head.w).column(0).to_owned() + model.mu_head.b[0];
    let sigma_raw = h.dot(&model.sigma_head.w).column(0).to_owned() + model.sigma_head.b[0];
    let sigma = sigma_raw.mapv(|v| softplus(v) + SIGMA_FLOOR);
    ForwardPass {
        activations,
        mu,
        sigma_raw,
        sigma,
    }
}

/// Gaussian parameters for one input row.
pub fn forward_dist(model: &MLPModel, x: &[f64]) -> Result<GaussianParams> {
    if x.len() != model.input_dim {
        return Err(Error::Data(format!(
            "row has {} features but the model expects {}",
            x.len(),
            model.input_dim
        )));
    }
    let xb = ArrayView1::from(x).insert_axis(Axis(0));
    let pass = forward_batch(model, xb);
    GaussianParams::new(pass.mu[0], pass.sigma[0])
}

pub fn predict_dist_pnn(model: &MLPModel, x: &[f64]) -> Result<PredictiveDistribution> {
    Ok(PredictiveDistribution::Gaussian(forward_dist(model, x)?))
}

// Flat parameter packing: hidden layers (w then b, in order), mu head, sigma
// head. Used by Adam and the finite-difference checks.

fn tensors(model: &MLPModel) -> Vec<(&Array2<f64>, &Array1<f64>)> {
    let mut out: Vec<(&Array2<f64>, &Array1<f64>)> =
        model.layers.iter().map(|l| (&l.w, &l.b)).collect();
    out.push((&model.mu_head.w, &model.mu_head.b));
    out.push((&model.sigma_head.w, &model.sigma_head.b));
    out
}

pub fn param_count(model: &MLPModel) -> usize {
    tensors(model).iter().map(|(w, b)| w.len() + b.len()).sum()
}

pub fn pack_params(model: &MLPModel) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count(model));
    for (w, b) in tensors(model) {
        out.extend(w.iter());
        out.extend(b.iter());
    }
    out
}

pub fn unpack_params(model: &mut MLPModel, flat: &[f64]) {
    let mut offset = 0;
    let mut take = |w: &mut Array2<f64>, b: &mut Array1<f64>| {
        for v in w.iter_mut() {
            *v = flat[offset];
            offset += 1;
        }
        for v in b.iter_mut() {
            *v = flat[offset];
            offset += 1;
        }
    };
    for layer in &mut model.layers {
        take(&mut layer.w, &mut layer.b);
    }
    take(&mut model.mu_head.w, &mut model.mu_head.b);
    take(&mut model.sigma_head.w, &mut model.sigma_head.b);
    assert_eq!(offset, flat.len());
}

/// Mean Gaussian NLL over a batch plus `l2 * sum of squared weights`
/// (biases excluded).
pub fn batch_loss(model: &MLPModel, x: ArrayView2<'_, f64>, y: &[f64], l2: f64) -> f64 {
    let pass = forward_batch(model, x);
    let n = y.len() as f64;
    let mut nll = 0.0;
    for i in 0..y.len() {
        let z = (y[i] - pass.mu[i]) / pass.sigma[i];
        nll += 0.5 * (2.0 * std::f64::consts::PI).ln() + pass.sigma[i].ln() + 0.5 * z * z;
    }
    let mut reg = 0.0;
    for layer in model.layers.iter() {
        reg += layer.w.iter().map(|w| w * w).sum::<f64>();
    }
    reg += model.mu_head.w.iter().map(|w| w * w).sum::<f64>();
    reg += model.sigma_head.w.iter().map(|w| w * w).sum::<f64>();
    nll / n + l2 * reg
}

/// Reverse-mode gradient of `batch_loss`, flattened in pack order.
pub fn batch_grad(model: &MLPModel, x: ArrayView2<'_, f64>, y: &[f64], l2: f64) -> Vec<f64> {
    let pass = forward_batch(model, x);
    let n = y.len();
    let nf = n as f64;

    // Head deltas: d(mean NLL)/d mu and through softplus for sigma.
    let mut d_mu = Array2::zeros((n, 1));
    let mut d_sraw = Array2::zeros((n, 1));
    for i in 0..n {
        let sigma = pass.sigma[i];
        let diff = y[i] - pass.mu[i];
        d_mu[(i, 0)] = -diff / (sigma * sigma) / nf;
        let d_sigma = (1.0 / sigma - diff * diff / (sigma * sigma * sigma)) / nf;
        d_sraw[(i, 0)] = d_sigma * sigmoid(pass.sigma_raw[i]);
    }

    let h_last = pass.activations.last().unwrap();
    let g_mu_w = h_last.t().dot(&d_mu) + &(&model.mu_head.w * (2.0 * l2));
    let g_mu_b = d_mu.sum_axis(Axis(0));
    let g_sig_w = h_last.t().dot(&d_sraw) + &(&model.sigma_head.w * (2.0 * l2));
    let g_sig_b = d_sraw.sum_axis(Axis(0));

    // Backpropagate into the hidden stack.
    let mut delta = d_mu.dot(&model.mu_head.w.t()) + d_sraw.dot(&model.sigma_head.w.t());
    let mut layer_grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(model.layers.len());
    for (idx, layer) in model.layers.iter().enumerate().rev() {
        // ReLU mask of this layer's output.
        let post = &pass.activations[idx + 1];
        ndarray::Zip::from(&mut delta).and(post).for_each(|d, &a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
        let g_w = pass.activations[idx].t().dot(&delta) + &(&layer.w * (2.0 * l2));
        let g_b = delta.sum_axis(Axis(0));
        if idx > 0 {
            delta = delta.dot(&layer.w.t());
        }
        layer_grads.push((g_w, g_b));
    }
    layer_grads.reverse();

    let mut flat = Vec::with_capacity(param_count(model));
    for (g_w, g_b) in &layer_grads {
        flat.extend(g_w.iter());
        flat.extend(g_b.iter());
    }
    flat.extend(g_mu_w.iter());
    flat.extend(g_mu_b.iter());
    flat.extend(g_sig_w.iter());
    flat.extend(g_sig_b.iter());
    flat
}

/// Per-epoch mean training loss, returned alongside the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_loss: Vec<f64>,
}

pub fn train_pnn(dm: &DesignMatrix, config: &MLPConfig) -> Result<(MLPModel, TrainTrace)> {
    train_pnn_xy(dm.x.view(), dm.y.as_slice().unwrap(), config)
}

pub fn train_pnn_xy(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    config: &MLPConfig,
) -> Result<(MLPModel, TrainTrace)> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::Data(format!(
            "design matrix has {n} rows but {} targets",
            y.len()
        )));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let std = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    let mut model = init_mlp(config, x.ncols(), std)?;

    let batch_size = config.batch_size.max(1).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = pack_params(&model);
    let mut adam = AdamState::new(params.len());
    let mut epoch_loss = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut running = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(batch_size) {
            let xb = Array2::from_shape_fn((chunk.len(), x.ncols()), |(i, j)| x[(chunk[i], j)]);
            let yb: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
            let loss = batch_loss(&model, xb.view(), &yb, config.l2);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {batches}"
                )));
            }
            let grads = batch_grad(&model, xb.view(), &yb, config.l2);
            adam.step(&mut params, &grads, config.learning_rate);
            unpack_params(&mut model, &params);
            running += loss;
            batches += 1.0;
        }
        epoch_loss.push(running / batches);
    }
    Ok((model, TrainTrace { epoch_loss }))
}
