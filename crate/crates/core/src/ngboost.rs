//! Natural gradient boosting: each stage fits one regression tree per
//! distribution parameter to the negative natural gradient of the NLL, then
//! scales the stage by a line-searched step shared across samples.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DesignMatrix;
use crate::dist::{Family, PredictiveDistribution, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::tree::{fit_tree_on_rows, RegressionTree, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGBoostConfig {
    pub family: Family,
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub tree: TreeConfig,
    pub subsample: f64,
    /// Precondition gradients by the inverse Fisher information. Plain
    /// gradients are kept selectable to make the Exponential-family
    /// equivalence checkable.
    pub natural_gradient: bool,
}

impl NGBoostConfig {
    pub fn defaults(family: Family) -> Self {
        Self {
            family,
            n_estimators: 500,
            learning_rate: 0.01,
            tree: TreeConfig::new(3),
            subsample: 1.0,
            natural_gradient: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub trees: Vec<RegressionTree>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGBoostModel {
    pub family: Family,
    pub theta0: Vec<f64>,
    pub stages: Vec<Stage>,
    pub learning_rate: f64,
    pub n_features: usize,
}

/// Marginal maximum-likelihood parameters used as the boosting base margin.
pub fn marginal_mle(family: Family, y: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::Data("cannot fit a marginal on zero targets".into()));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    match family {
        Family::Gaussian => {
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sigma = var.sqrt().max(SIGMA_FLOOR);
            Ok(vec![mean, sigma.ln()])
        }
        Family::Exponential => {
            if y.iter().any(|&v| v < 0.0) {
                return Err(Error::Data(
                    "Exponential family requires nonnegative targets".into(),
                ));
            }
            if mean <= 0.0 {
                return Err(Error::Numerical(
                    "mean target must be positive for the Exponential marginal".into(),
                ));
            }
            Ok(vec![mean.ln()])
        }
    }
}

fn total_nll(family: Family, theta: &Array2<f64>, y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        acc += family.nll(theta.row(i).as_slice().unwrap(), yi);
    }
    acc
}

/// Scalar step for one boosting stage: the value from the geometric grid
/// `{1, 1/2, ..., 2^-10}` minimizing total NLL along `theta + rho*direction`,
/// or the smallest grid value when nothing improves.
pub fn line_search(
    family: Family,
    theta: &Array2<f64>,
    direction: &Array2<f64>,
    y: &[f64],
) -> f64 {
    let base = total_nll(family, theta, y);
    let mut best: Option<(f64, f64)> = None;
    for k in 0..=10 {
        let rho = 0.5f64.powi(k);
        let candidate = theta + &(direction * rho);
        let nll = total_nll(family, &candidate, y);
        if nll.is_finite() && nll < base {
            match best {
                Some((_, best_nll)) if nll >= best_nll => {}
                _ => best = Some((rho, nll)),
            }
        }
    }
    best.map(|(rho, _)| rho).unwrap_or(0.5f64.powi(10))
}

pub fn fit_ngboost(dm: &DesignMatrix, config: &NGBoostConfig, seed: u64) -> Result<NGBoostModel> {
    fit_ngboost_xy(dm.x.view(), dm.y.as_slice().unwrap(), config, seed)
}

pub fn fit_ngboost_xy(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    config: &NGBoostConfig,
    seed: u64,
) -> Result<NGBoostModel> {
    if !(config.learning_rate > 0.0 && config.learning_rate <= 1.0) {
        return Err(Error::Usage(format!(
            "learning rate {} outside (0,1]",
            config.learning_rate
        )));
    }
    if !(config.subsample > 0.0 && config.subsample <= 1.0) {
        return Err(Error::Usage(format!(
            "subsample {} outside (0,1]",
            config.subsample
        )));
    }
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::Data(format!(
            "design matrix has {n} rows but {} targets",
            y.len()
        )));
    }

    let family = config.family;
    let dim = family.param_dim();
    let theta0 = marginal_mle(family, y)?;
    let mut theta = Array2::zeros((n, dim));
    for i in 0..n {
        for k in 0..dim {
            theta[(i, k)] = theta0[k];
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all_rows: Vec<usize> = (0..n).collect();
    let n_sub = ((n as f64 * config.subsample).floor() as usize).max(1);
    let mut stages = Vec::with_capacity(config.n_estimators);

    for stage_idx in 0..config.n_estimators {
        // Per-sample descent targets: negative (natural) gradients.
        let mut neg_grads = Array2::zeros((n, dim));
        for i in 0..n {
            let t = theta.row(i);
            let t = t.as_slice().unwrap();
            let g = if config.natural_gradient {
                family.natural_grad(t, y[i])?
            } else {
                family.grad(t, y[i])?
            };
            for k in 0..dim {
                neg_grads[(i, k)] = -g[k];
            }
        }

        let rows: Vec<usize> = if n_sub < n {
            all_rows.shuffle(&mut rng);
            let mut sel = all_rows[..n_sub].to_vec();
            sel.sort_unstable();
            sel
        } else {
            all_rows.clone()
        };

        let mut trees = Vec::with_capacity(dim);
        for k in 0..dim {
            let targets: Vec<f64> = neg_grads.column(k).to_vec();
            trees.push(fit_tree_on_rows(x, &targets, &rows, &config.tree, &mut rng)?);
        }

        // Stage direction on every training row.
        let mut direction = Array2::zeros((n, dim));
        for i in 0..n {
            let row = x.row(i);
            let row = row.as_slice().unwrap();
            for (k, tree) in trees.iter().enumerate() {
                direction[(i, k)] = tree.predict_row(row)?;
            }
        }

        let rho = line_search(family, &theta, &direction, y);
        theta += &(direction * (config.learning_rate * rho));

        let nll = total_nll(family, &theta, y);
        if !nll.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite NLL after boosting stage {stage_idx}"
            )));
        }
        stages.push(Stage { trees, rho });
    }

    Ok(NGBoostModel {
        family,
        theta0,
        stages,
        learning_rate: config.learning_rate,
        n_features: x.ncols(),
    })
}

/// Internal parameters at a row: base margin plus the scaled stage outputs.
pub fn predict_theta(model: &NGBoostModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.n_features {
        return Err(Error::Data(format!(
            "row has {} features but the model was trained with {}",
            x.len(),
            model.n_features
        )));
    }
    let mut theta = model.theta0.clone();
    for stage in &model.stages {
        for (k, tree) in stage.trees.iter().enumerate() {
            theta[k] += model.learning_rate * stage.rho * tree.predict_row(x)?;
        }
    }
    Ok(theta)
}

pub fn predict_dist_ngboost(model: &NGBoostModel, x: &[f64]) -> Result<PredictiveDistribution> {
    let theta = predict_theta(model, x)?;
    Ok(model.family.distribution(&theta))
}

/// Mean training NLL for each stage prefix (index 0 is the marginal fit);
/// used by trace printing and the monotonicity checks.
pub fn training_nll_trace(
    model: &NGBoostModel,
    x: ArrayView2<'_, f64>,
    y: &[f64],
) -> Result<Vec<f64>> {
    let n = x.nrows();
    let dim = model.family.param_dim();
    let mut theta = Array2::zeros((n, dim));
    for i in 0..n {
        for k in 0..dim {
            theta[(i, k)] = model.theta0[k];
        }
    }
    let mut trace = vec![total_nll(model.family, &theta, y) / n as f64];
    for stage in &model.stages {
        for i in 0..n {
            let row = x.row(i);
            let row = row.as_slice().unwrap();
            for (k, tree) in stage.trees.iter().enumerate() {
                theta[(i, k)] += model.learning_rate * stage.rho * tree.predict_row(row)?;
            }
        }
        trace.push(total_nll(model.family, &theta, y) / n as f64);
    }
    Ok(trace)
}
