//! Gradient boosted trees under squared and pinball losses, and the
//! composite model producing lower/median/mean/upper predictions.
//!
//! Pinball leaf values are refit to the residual quantile of the leaf's
//! subsampled rows; plain gradient-sign means converge far too slowly for
//! quantile targets.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DesignMatrix;
use crate::dist::{PredictiveDistribution, QuantileSet};
use crate::error::{Error, Result};
use crate::tree::{fit_tree_on_rows, MaxFeatures, RegressionTree, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Loss {
    Squared,
    Pinball(f64),
}

impl Loss {
    fn validate(&self) -> Result<()> {
        if let Loss::Pinball(alpha) = self {
            if !(*alpha > 0.0 && *alpha < 1.0) {
                return Err(Error::Usage(format!(
                    "pinball level {alpha} outside (0,1)"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GBConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub subsample: f64,
    pub tree: TreeConfig,
}

impl GBConfig {
    /// Reference hyperparameters for the composite quantile model.
    pub fn defaults(loss: Loss) -> Self {
        Self {
            loss,
            learning_rate: 0.007,
            n_estimators: 200,
            subsample: 0.65,
            tree: TreeConfig {
                max_depth: 13,
                min_samples_split: 10,
                min_samples_leaf: 5,
                max_features: MaxFeatures::Count(3),
            },
        }
    }
}

/// Single boosted model: prediction = init_value + lr * sum of tree outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBModel {
    pub init_value: f64,
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub loss: Loss,
}

impl GBModel {
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        let mut f = self.init_value;
        for tree in &self.trees {
            f += self.learning_rate * tree.predict_row(x)?;
        }
        Ok(f)
    }
}

/// Pinball (quantile) loss: `alpha*(y-q)` when `y >= q`, else `(1-alpha)*(q-y)`.
pub fn pinball_loss(alpha: f64, y: f64, q: f64) -> f64 {
    if y >= q {
        alpha * (y - q)
    } else {
        (1.0 - alpha) * (q - y)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
fn empirical_quantile(values: &mut [f64], alpha: f64) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let pos = alpha * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        values[lo]
    } else {
        let w = pos - lo as f64;
        values[lo] * (1.0 - w) + values[hi] * w
    }
}

fn pseudo_residual(loss: Loss, y: f64, f: f64) -> f64 {
    match loss {
        Loss::Squared => y - f,
        Loss::Pinball(alpha) => {
            if y > f {
                alpha
            } else if y < f {
                alpha - 1.0
            } else {
                0.0
            }
        }
    }
}

pub fn fit_gb(dm: &DesignMatrix, config: &GBConfig, seed: u64) -> Result<GBModel> {
    fit_gb_xy(dm.x.view(), dm.y.as_slice().unwrap(), config, seed)
}

pub fn fit_gb_xy(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    config: &GBConfig,
    seed: u64,
) -> Result<GBModel> {
    config.loss.validate()?;
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

    let init_value = match config.loss {
        Loss::Squared => y.iter().sum::<f64>() / n as f64,
        Loss::Pinball(alpha) => empirical_quantile(&mut y.to_vec(), alpha),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = vec![init_value; n];
    let mut residuals = vec![0.0; n];
    let mut all_rows: Vec<usize> = (0..n).collect();
    let n_sub = ((n as f64 * config.subsample).floor() as usize).max(1);
    let mut trees = Vec::with_capacity(config.n_estimators);

    for _ in 0..config.n_estimators {
        for i in 0..n {
            residuals[i] = pseudo_residual(config.loss, y[i], f[i]);
        }
        let rows: Vec<usize> = if n_sub < n {
            all_rows.shuffle(&mut rng);
            let mut sel = all_rows[..n_sub].to_vec();
            sel.sort_unstable();
            sel
        } else {
            all_rows.clone()
        };

        let mut tree = fit_tree_on_rows(x, &residuals, &rows, &config.tree, &mut rng)?;

        // Leaf refit on the subsampled rows' raw residuals (y - F).
        let mut members: std::collections::HashMap<usize, Vec<f64>> = Default::default();
        for &i in &rows {
            let leaf = tree.leaf_index(x.row(i).as_slice().unwrap())?;
            members.entry(leaf).or_default().push(y[i] - f[i]);
        }
        for (leaf, mut vals) in members {
            let value = match config.loss {
                Loss::Squared => vals.iter().sum::<f64>() / vals.len() as f64,
                Loss::Pinball(alpha) => empirical_quantile(&mut vals, alpha),
            };
            tree.set_leaf_value(leaf, value);
        }

        for i in 0..n {
            f[i] += config.learning_rate * tree.predict_row(x.row(i).as_slice().unwrap())?;
        }
        trees.push(tree);
    }

    Ok(GBModel {
        init_value,
        trees,
        learning_rate: config.learning_rate,
        loss: config.loss,
    })
}

/// Lower/median/mean/upper composite, with optional extra per-level models
/// for calibration curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QGBModel {
    pub lower: GBModel,
    pub median: GBModel,
    pub mean: GBModel,
    pub upper: GBModel,
    pub levels: (f64, f64),
    pub grid: Vec<(f64, GBModel)>,
}

pub fn fit_qgb(
    dm: &DesignMatrix,
    alpha_low: f64,
    alpha_high: f64,
    config: &GBConfig,
    seed: u64,
    grid: Option<&[f64]>,
) -> Result<QGBModel> {
    if !(0.0 < alpha_low && alpha_low < 0.5 && 0.5 < alpha_high && alpha_high < 1.0) {
        return Err(Error::Usage(format!(
            "interval levels ({alpha_low}, {alpha_high}) must satisfy 0 < low < 0.5 < high < 1"
        )));
    }
    let with_loss = |loss| GBConfig { loss, ..*config };
    let lower = fit_gb(dm, &with_loss(Loss::Pinball(alpha_low)), seed)?;
    let median = fit_gb(dm, &with_loss(Loss::Pinball(0.5)), seed)?;
    let mean = fit_gb(dm, &with_loss(Loss::Squared), seed)?;
    let upper = fit_gb(dm, &with_loss(Loss::Pinball(alpha_high)), seed)?;

    let mut grid_models = Vec::new();
    if let Some(levels) = grid {
        for &level in levels {
            // The component models already cover their own levels.
            if level == alpha_low || level == 0.5 || level == alpha_high {
                continue;
            }
            grid_models.push((level, fit_gb(dm, &with_loss(Loss::Pinball(level)), seed)?));
        }
        grid_models.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    Ok(QGBModel {
        lower,
        median,
        mean,
        upper,
        levels: (alpha_low, alpha_high),
        grid: grid_models,
    })
}

/// Evaluate all component and grid models, repair quantile crossing by
/// sorting the predicted values, and attach the squared-loss mean.
pub fn predict_qgb(model: &QGBModel, x: &[f64]) -> Result<PredictiveDistribution> {
    let mut levels: Vec<f64> = vec![model.levels.0, 0.5, model.levels.1];
    let mut values = vec![
        model.lower.predict_row(x)?,
        model.median.predict_row(x)?,
        model.upper.predict_row(x)?,
    ];
    for (level, gb) in &model.grid {
        levels.push(*level);
        values.push(gb.predict_row(x)?);
    }
    let mean = model.mean.predict_row(x)?;

    // Monotone repair: pair sorted levels with sorted values.
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
    let sorted_levels: Vec<f64> = order.iter().map(|&i| levels[i]).collect();
    values.sort_by(f64::total_cmp);

    let points = sorted_levels.into_iter().zip(values).collect();
    Ok(PredictiveDistribution::Quantiles(QuantileSet::new(
        points,
        Some(mean),
    )?))
}
