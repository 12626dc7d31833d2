//! Sparse variational Gaussian process regression with an RBF-ARD kernel,
//! Gaussian likelihood, and minibatch evidence-lower-bound ascent.
//!
//! The parameterization is unwhitened: q(u) = N(m, S) with S = L L^T lives
//! directly over the inducing outputs. Positive quantities (kernel variance,
//! lengthscales, noise, the diagonal of L) are optimized in log-space. ELBO
//! gradients are analytic; the derivative with respect to the kernel flows
//! through adjoint matrices contracted against closed-form RBF derivatives.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DesignMatrix;
use crate::dist::{GaussianParams, PredictiveDistribution};
use crate::error::{Error, Result};
use crate::optim::AdamState;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBFKernel {
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl RBFKernel {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if variance <= 0.0 || lengthscales.iter().any(|&l| l <= 0.0) {
            return Err(Error::Numerical(
                "kernel variance and lengthscales must be positive".into(),
            ));
        }
        Ok(Self {
            variance,
            lengthscales,
        })
    }

    fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for d in 0..a.len() {
            let diff = (a[d] - b[d]) / self.lengthscales[d];
            acc += diff * diff;
        }
        self.variance * (-0.5 * acc).exp()
    }
}

/// Dense kernel matrix k(A_i, B_j).
pub fn kernel_matrix(kernel: &RBFKernel, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for i in 0..a.nrows() {
        let ai: Vec<f64> = a.row(i).iter().copied().collect();
        for j in 0..b.nrows() {
            let bj: Vec<f64> = b.row(j).iter().copied().collect();
            out[(i, j)] = kernel.k(&ai, &bj);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgpModel {
    pub kernel: RBFKernel,
    pub noise_variance: f64,
    /// Inducing inputs, M x d.
    pub z: DMatrix<f64>,
    /// Variational mean over inducing outputs.
    pub m: DVector<f64>,
    /// Lower-triangular factor of the variational covariance S = L L^T.
    pub l_s: DMatrix<f64>,
    pub jitter: f64,
    pub y_mean: f64,
    pub y_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgpConfig {
    pub inducing: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub optimize_hyperparams: bool,
    pub standardize_y: bool,
}

impl Default for SvgpConfig {
    fn default() -> Self {
        Self {
            inducing: 100,
            batch_size: 1000,
            learning_rate: 0.01,
            steps: 2000,
            seed: 0,
            optimize_hyperparams: true,
            standardize_y: true,
        }
    }
}

fn cholesky_with_jitter(
    k: &DMatrix<f64>,
    base_jitter: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    // Escalate x10 up to 1e-2 not only when the factorization fails outright
    // but also when the factor is numerically near-singular; the unwhitened
    // variational parameterization stalls on ill-conditioned K_MM.
    const DIAG_RATIO_FLOOR: f64 = 1e-3;
    let mut jitter = base_jitter;
    loop {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            let l = chol.l_dirty();
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for i in 0..l.nrows() {
                let d = l[(i, i)];
                lo = lo.min(d);
                hi = hi.max(d);
            }
            if lo * lo >= DIAG_RATIO_FLOOR * hi * hi || jitter > 1e-2 {
                return Ok((chol, jitter));
            }
        } else if jitter > 1e-2 {
            return Err(Error::Numerical(format!(
                "Cholesky failed even at jitter {jitter:.0e}"
            )));
        }
        jitter *= 10.0;
    }
}

fn ln_det_from_lower(l: &DMatrix<f64>) -> f64 {
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Shared forward quantities for the ELBO and its gradient.
struct ElboState {
    p: DMatrix<f64>,     // K_MM^-1 (jittered)
    k_zz: DMatrix<f64>,  // kernel part, no jitter
    knm: DMatrix<f64>,   // B x M cross kernel
    v_mat: DMatrix<f64>, // Knm * P
    alpha: DVector<f64>, // P * m
    mu: DVector<f64>,
    var: DVector<f64>,
    s: DMatrix<f64>,
    elbo: f64,
    weight: f64,
    residual: DVector<f64>,
    ln_det_k: f64,
}

fn elbo_forward(
    model: &SvgpModel,
    xb: &DMatrix<f64>,
    yb_std: &DVector<f64>,
    n_full: usize,
) -> Result<ElboState> {
    let m_count = model.z.nrows();
    let batch = xb.nrows();
    if batch == 0 {
        return Err(Error::Data("empty minibatch".into()));
    }
    let k_zz = kernel_matrix(&model.kernel, &model.z, &model.z);
    let (chol, _) = cholesky_with_jitter(&k_zz, model.jitter)?;
    let ln_det_k = ln_det_from_lower(chol.l_dirty());
    let p = chol.inverse();
    let knm = kernel_matrix(&model.kernel, xb, &model.z);
    let v_mat = &knm * &p;
    let alpha = &p * &model.m;
    let mu = &knm * &alpha;

    let s = &model.l_s * model.l_s.transpose();
    let w_mat = &v_mat * &s; // B x M
    let mut var = DVector::zeros(batch);
    for i in 0..batch {
        let mut quad = 0.0;
        let mut corr = 0.0;
        for j in 0..m_count {
            corr += v_mat[(i, j)] * knm[(i, j)];
            quad += w_mat[(i, j)] * v_mat[(i, j)];
        }
        var[i] = model.kernel.variance - corr + quad;
    }

    let noise = model.noise_variance;
    let weight = n_full as f64 / batch as f64;
    let mut ell = 0.0;
    let mut residual = DVector::zeros(batch);
    for i in 0..batch {
        let r = yb_std[i] - mu[i];
        residual[i] = r;
        ell += weight * (-0.5 * (LN_2PI + noise.ln()) - (r * r + var[i]) / (2.0 * noise));
    }

    let tr_ps = (&p * &s).trace();
    let m_quad = model.m.dot(&alpha);
    let ln_det_s = ln_det_from_lower(&model.l_s);
    let kl = 0.5 * (tr_ps + m_quad - m_count as f64 + ln_det_k - ln_det_s);

    Ok(ElboState {
        p,
        k_zz,
        knm,
        v_mat,
        alpha,
        mu,
        var,
        s,
        elbo: ell - kl,
        weight,
        residual,
        ln_det_k,
    })
}

/// Evidence lower bound of a minibatch, scaled to the full train size.
/// Targets are given on the raw scale and standardized internally.
pub fn elbo(model: &SvgpModel, xb: &DMatrix<f64>, yb: &[f64], n_full: usize) -> Result<f64> {
    let yb_std = DVector::from_iterator(
        yb.len(),
        yb.iter().map(|&v| (v - model.y_mean) / model.y_std),
    );
    Ok(elbo_forward(model, xb, &yb_std, n_full)?.elbo)
}

// Flat parameter order: [ln variance, ln lengthscales (d), ln noise,
// m (M), L_S lower triangle row-major with ln on the diagonal, Z row-major].

pub fn param_count_of(model: &SvgpModel) -> usize {
    let d = model.kernel.lengthscales.len();
    let m = model.z.nrows();
    1 + d + 1 + m + m * (m + 1) / 2 + m * d
}

pub fn pack_params(model: &SvgpModel) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count_of(model));
    out.push(model.kernel.variance.ln());
    out.extend(model.kernel.lengthscales.iter().map(|l| l.ln()));
    out.push(model.noise_variance.ln());
    out.extend(model.m.iter());
    for i in 0..model.z.nrows() {
        for j in 0..=i {
            if i == j {
                out.push(model.l_s[(i, i)].ln());
            } else {
                out.push(model.l_s[(i, j)]);
            }
        }
    }
    for i in 0..model.z.nrows() {
        for j in 0..model.z.ncols() {
            out.push(model.z[(i, j)]);
        }
    }
    out
}

pub fn set_params(model: &mut SvgpModel, flat: &[f64]) {
    let d = model.kernel.lengthscales.len();
    let m = model.z.nrows();
    let mut idx = 0;
    model.kernel.variance = flat[idx].exp();
    idx += 1;
    for l in model.kernel.lengthscales.iter_mut() {
        *l = flat[idx].exp();
        idx += 1;
    }
    model.noise_variance = flat[idx].exp();
    idx += 1;
    for i in 0..m {
        model.m[i] = flat[idx];
        idx += 1;
    }
    for i in 0..m {
        for j in 0..=i {
            model.l_s[(i, j)] = if i == j { flat[idx].exp() } else { flat[idx] };
            idx += 1;
        }
    }
    for i in 0..m {
        for j in 0..d {
            model.z[(i, j)] = flat[idx];
            idx += 1;
        }
    }
    debug_assert_eq!(idx, flat.len());
}

/// ELBO and its gradient in packed log coordinates.
pub fn elbo_and_grad(
    model: &SvgpModel,
    xb: &DMatrix<f64>,
    yb: &[f64],
    n_full: usize,
) -> Result<(f64, Vec<f64>)> {
    let yb_std = DVector::from_iterator(
        yb.len(),
        yb.iter().map(|&v| (v - model.y_mean) / model.y_std),
    );
    let st = elbo_forward(model, xb, &yb_std, n_full)?;
    let m_count = model.z.nrows();
    let d = model.kernel.lengthscales.len();
    let batch = xb.nrows();
    let noise = model.noise_variance;

    // Scalar sensitivities of the expected log-likelihood term.
    let g = st.residual.map(|r| st.weight * r / noise); // dELBO / d mu_i
    let h = -st.weight / (2.0 * noise); // dELBO / d v_i (same each i)

    // m and S adjoints.
    let m_adj = st.v_mat.transpose() * &g - &st.alpha;
    let vt_v = st.v_mat.transpose() * &st.v_mat;
    let linv = model
        .l_s
        .clone()
        .solve_lower_triangular(&DMatrix::identity(m_count, m_count))
        .ok_or_else(|| Error::Numerical("variational factor is singular".into()))?;
    let s_inv = linv.transpose() * &linv;
    let s_adj = &vt_v * h - &st.p * 0.5 + &s_inv * 0.5;
    let l_adj_full = (&s_adj + s_adj.transpose()) * &model.l_s;

    // Knm adjoint: mean term plus both variance terms.
    let w_p = (&st.v_mat * &st.s) * &st.p;
    let mut knm_adj = &g * st.alpha.transpose();
    knm_adj += (&w_p - &st.v_mat) * (2.0 * h);

    // P adjoint, then converted to a K adjoint via dP = -P dK P.
    let c = st.knm.transpose() * &st.knm;
    let cps = (&c * &st.p) * &st.s;
    let mut p_adj = (st.knm.transpose() * &g) * model.m.transpose();
    p_adj += (&cps + cps.transpose() - &c) * h;
    p_adj += -(&st.s) * 0.5 - (&model.m * model.m.transpose()) * 0.5;
    let k_adj = -(&st.p * &p_adj) * &st.p - &st.p * 0.5;

    // Log-noise gradient: direct likelihood term only.
    let mut grad_ln_noise = 0.0;
    for i in 0..batch {
        grad_ln_noise +=
            st.weight * (-0.5 + (st.residual[i] * st.residual[i] + st.var[i]) / (2.0 * noise));
    }

    // Kernel-parameter gradients by contraction with RBF derivatives.
    let mut grad_ln_var = batch as f64 * h * model.kernel.variance;
    let mut grad_ln_ls = vec![0.0; d];
    let mut grad_z = DMatrix::zeros(m_count, d);
    for a in 0..m_count {
        for b in 0..m_count {
            let kab = st.k_zz[(a, b)];
            let adj = k_adj[(a, b)];
            grad_ln_var += adj * kab;
            for dd in 0..d {
                let ls = model.kernel.lengthscales[dd];
                let diff = model.z[(a, dd)] - model.z[(b, dd)];
                grad_ln_ls[dd] += adj * kab * diff * diff / (ls * ls);
            }
        }
    }
    for i in 0..batch {
        for b in 0..m_count {
            let kib = st.knm[(i, b)];
            let adj = knm_adj[(i, b)];
            grad_ln_var += adj * kib;
            for dd in 0..d {
                let ls = model.kernel.lengthscales[dd];
                let diff = xb[(i, dd)] - model.z[(b, dd)];
                grad_ln_ls[dd] += adj * kib * diff * diff / (ls * ls);
                grad_z[(b, dd)] += adj * kib * diff / (ls * ls);
            }
        }
    }
    for p in 0..m_count {
        for b in 0..m_count {
            let kpb = st.k_zz[(p, b)];
            let combined = k_adj[(p, b)] + k_adj[(b, p)];
            for dd in 0..d {
                let ls = model.kernel.lengthscales[dd];
                let diff = model.z[(b, dd)] - model.z[(p, dd)];
                grad_z[(p, dd)] += combined * kpb * diff / (ls * ls);
            }
        }
    }

    let mut flat = Vec::with_capacity(param_count_of(model));
    flat.push(grad_ln_var);
    flat.extend(grad_ln_ls);
    flat.push(grad_ln_noise);
    flat.extend(m_adj.iter());
    for i in 0..m_count {
        for j in 0..=i {
            if i == j {
                flat.push(l_adj_full[(i, i)] * model.l_s[(i, i)]);
            } else {
                flat.push(l_adj_full[(i, j)]);
            }
        }
    }
    for i in 0..m_count {
        for j in 0..d {
            flat.push(grad_z[(i, j)]);
        }
    }
    Ok((st.elbo, flat))
}

fn to_dmatrix(x: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)])
}

/// Initialize a model from data: inducing points are a random subset of the
/// training rows, kernel variance is the target variance, lengthscales the
/// per-dimension input spread, and S starts at the prior covariance.
pub fn init_svgp(x: ArrayView2<'_, f64>, y: &[f64], config: &SvgpConfig) -> Result<SvgpModel> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::Data(format!(
            "design matrix has {n} rows but {} targets",
            y.len()
        )));
    }
    if config.inducing == 0 || config.inducing > n {
        return Err(Error::Usage(format!(
            "inducing count {} outside 1..={n}",
            config.inducing
        )));
    }
    let (y_mean, y_std) = if config.standardize_y {
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        (mean, var.sqrt().max(1e-12))
    } else {
        (0.0, 1.0)
    };
    let y_var_std = {
        let scaled: Vec<f64> = y.iter().map(|&v| (v - y_mean) / y_std).collect();
        let mean = scaled.iter().sum::<f64>() / n as f64;
        scaled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
    };

    let d = x.ncols();
    let mut lengthscales = Vec::with_capacity(d);
    for j in 0..d {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        lengthscales.push(sd.max(1e-3));
    }
    let kernel = RBFKernel::new(y_var_std.max(1e-6), lengthscales)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    rows.truncate(config.inducing);
    rows.sort_unstable();
    let z = DMatrix::from_fn(config.inducing, d, |i, j| x[(rows[i], j)]);

    let jitter = 1e-6;
    let k_zz = kernel_matrix(&kernel, &z, &z);
    let (chol, _) = cholesky_with_jitter(&k_zz, jitter)?;
    let l_s = chol.l();

    Ok(SvgpModel {
        kernel,
        noise_variance: (0.1 * y_var_std).max(1e-6),
        z,
        m: DVector::zeros(config.inducing),
        l_s,
        jitter,
        y_mean,
        y_std,
    })
}

pub fn fit_svgp(dm: &DesignMatrix, config: &SvgpConfig) -> Result<SvgpModel> {
    fit_svgp_xy(dm.x.view(), dm.y.as_slice().unwrap(), config)
}

pub fn fit_svgp_xy(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    config: &SvgpConfig,
) -> Result<SvgpModel> {
    let mut model = init_svgp(x, y, config)?;
    optimize_svgp(&mut model, x, y, config)?;
    Ok(model)
}

/// Adam ascent on the ELBO for `config.steps` minibatch steps. When
/// `optimize_hyperparams` is false only the variational parameters move.
pub fn optimize_svgp(
    model: &mut SvgpModel,
    x: ArrayView2<'_, f64>,
    y: &[f64],
    config: &SvgpConfig,
) -> Result<()> {
    let n = x.nrows();
    let batch_size = config.batch_size.max(1).min(n);
    let x_mat = to_dmatrix(x);
    let d = x.ncols();
    let m_count = model.z.nrows();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut params = pack_params(model);
    let mut adam = AdamState::new(params.len());
    let hyper_len = 1 + d + 1;
    let var_len = m_count + m_count * (m_count + 1) / 2;

    let mut order: Vec<usize> = (0..n).collect();
    for step in 0..config.steps {
        let rows: Vec<usize> = if batch_size < n {
            order.shuffle(&mut rng);
            order[..batch_size].to_vec()
        } else {
            order.clone()
        };
        let xb = DMatrix::from_fn(rows.len(), d, |i, j| x_mat[(rows[i], j)]);
        let yb: Vec<f64> = rows.iter().map(|&i| y[i]).collect();

        let (value, mut grad) = elbo_and_grad(model, &xb, &yb, n)?;
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite ELBO at optimization step {step}"
            )));
        }
        if !config.optimize_hyperparams {
            for g in grad.iter_mut().take(hyper_len) {
                *g = 0.0;
            }
            for g in grad.iter_mut().skip(hyper_len + var_len) {
                *g = 0.0;
            }
        }
        // Ascent: feed the negated gradient to the Adam minimizer.
        for g in grad.iter_mut() {
            *g = -*g;
        }
        adam.step(&mut params, &grad, config.learning_rate);
        set_params(model, &params);
    }
    Ok(())
}

/// Predictive distribution for one encoded row; includes observation noise.
pub fn predict_dist_svgp(model: &SvgpModel, x: &[f64]) -> Result<PredictiveDistribution> {
    let d = model.z.ncols();
    if x.len() != d {
        return Err(Error::Data(format!(
            "row has {} features but the model expects {d}",
            x.len()
        )));
    }
    let xq = DMatrix::from_fn(1, d, |_, j| x[j]);
    let k_zz = kernel_matrix(&model.kernel, &model.z, &model.z);
    let (chol, _) = cholesky_with_jitter(&k_zz, model.jitter)?;
    let kx = kernel_matrix(&model.kernel, &xq, &model.z); // 1 x M
    let kx_t = kx.transpose();
    let a = chol.solve(&kx_t); // K^-1 k_x
    let mean_std = a.dot(&model.m);

    let s = &model.l_s * model.l_s.transpose();
    let f_var = model.kernel.variance - kx_t.dot(&a) + (&s * &a).dot(&a);
    if f_var < -1e-9 {
        return Err(Error::Numerical(format!(
            "negative latent variance {f_var}"
        )));
    }
    let var_std = f_var.max(0.0) + model.noise_variance;

    let mean = model.y_mean + model.y_std * mean_std;
    let sigma = model.y_std * var_std.sqrt();
    Ok(PredictiveDistribution::Gaussian(GaussianParams::new(
        mean, sigma,
    )?))
}
