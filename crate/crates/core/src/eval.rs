//! Point metrics, interval coverage, the ridge-stabilized linear-regression
//! baseline, and the per-model comparison report.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibration::{calibration_curve, calibration_error, default_levels, pit};
use crate::dataset::DesignMatrix;
use crate::dist::PredictiveDistribution;
use crate::error::{Error, Result};

/// Coefficient of determination: 1 - SS_res / SS_tot.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(Error::Data(format!(
            "r2 needs matching nonempty vectors, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Data("r2 undefined for constant targets".into()));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean absolute percentage error, in percent.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(Error::Data(format!(
            "mape needs matching nonempty vectors, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.iter().any(|&v| v == 0.0) {
        return Err(Error::Data("mape undefined when a target is zero".into()));
    }
    let n = y.len() as f64;
    Ok(100.0 / n * y.iter().zip(yhat).map(|(a, b)| ((a - b) / a).abs()).sum::<f64>())
}

/// Fraction of targets inside the closed interval [lower_i, upper_i].
pub fn interval_coverage(y: &[f64], lowers: &[f64], uppers: &[f64]) -> Result<f64> {
    if y.len() != lowers.len() || y.len() != uppers.len() || y.is_empty() {
        return Err(Error::Data("coverage needs equal nonempty lengths".into()));
    }
    for (i, (l, u)) in lowers.iter().zip(uppers).enumerate() {
        if l > u {
            return Err(Error::Data(format!(
                "crossing bounds at row {i}: lower {l} > upper {u}"
            )));
        }
    }
    let inside = y
        .iter()
        .zip(lowers.iter().zip(uppers))
        .filter(|&(v, (l, u))| l <= v && v <= u)
        .count();
    Ok(inside as f64 / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinRegModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub ridge_epsilon: f64,
}

impl LinRegModel {
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(Error::Data(format!(
                "row has {} features but the model expects {}",
                x.len(),
                self.coefficients.len()
            )));
        }
        Ok(self
            .coefficients
            .iter()
            .zip(x)
            .map(|(c, v)| c * v)
            .sum::<f64>()
            + self.intercept)
    }
}

/// Least squares with a tiny ridge stabilizer, solved by normal equations on
/// centered data; the intercept is not penalized.
pub fn fit_linreg(dm: &DesignMatrix) -> Result<LinRegModel> {
    let n = dm.n();
    let d = dm.dim();
    if n == 0 {
        return Err(Error::Data("cannot fit on an empty design matrix".into()));
    }
    let ridge = 1e-8;

    let y_mean = dm.y.sum() / n as f64;
    let x_means: Vec<f64> = (0..d).map(|j| dm.x.column(j).sum() / n as f64).collect();

    let mut xtx = DMatrix::zeros(d, d);
    let mut xty = DVector::zeros(d);
    for i in 0..n {
        let yc = dm.y[i] - y_mean;
        for a in 0..d {
            let xa = dm.x[(i, a)] - x_means[a];
            xty[a] += xa * yc;
            for b in a..d {
                xtx[(a, b)] += xa * (dm.x[(i, b)] - x_means[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
        xtx[(a, a)] += ridge;
    }
    let chol = Cholesky::new(xtx)
        .ok_or_else(|| Error::Numerical("normal equations not positive definite".into()))?;
    let beta = chol.solve(&xty);
    let intercept = y_mean
        - beta
            .iter()
            .zip(&x_means)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    Ok(LinRegModel {
        coefficients: beta.iter().copied().collect(),
        intercept,
        ridge_epsilon: ridge,
    })
}

/// Anything that yields a predictive distribution per encoded row.
pub trait DistPredictor {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution>;
}

impl<F> DistPredictor for F
where
    F: Fn(&[f64]) -> Result<PredictiveDistribution>,
{
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        self(x)
    }
}

/// One report row; `None` cells serialize as empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub r2_mean: Option<f64>,
    pub mape_mean: Option<f64>,
    pub r2_median: Option<f64>,
    pub mape_median: Option<f64>,
    pub calibration_error: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    pub n_test: usize,
    pub nominal_level: f64,
}

impl MetricsReport {
    pub fn row(&self, model: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// CSV form: `model,r2_mean,mape_mean,r2_median,mape_median,
    /// calibration_error,coverage`; absent cells empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model,r2_mean,mape_mean,r2_median,mape_median,calibration_error,coverage\n",
        );
        let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.model,
                cell(r.r2_mean),
                cell(r.mape_mean),
                cell(r.r2_median),
                cell(r.mape_median),
                cell(r.calibration_error),
                cell(r.coverage)
            ));
        }
        out
    }

    /// Fixed-width text table for terminal output.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<28} {:>8} {:>10} {:>10} {:>12} {:>10} {:>9}\n",
            "model", "r2_mean", "mape_mean", "r2_median", "mape_median", "cal_error", "coverage"
        );
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:>8} {:>10} {:>10} {:>12} {:>10} {:>9}\n",
                r.model,
                cell(r.r2_mean),
                cell(r.mape_mean),
                cell(r.r2_median),
                cell(r.mape_median),
                cell(r.calibration_error),
                cell(r.coverage)
            ));
        }
        out
    }
}

/// Evaluate distribution-producing models plus point baselines on a test
/// design matrix. `point_baselines` rows (linear regression, status quo)
/// populate mean-prediction metrics only.
pub fn build_report(
    models: &[(String, &dyn DistPredictor)],
    point_baselines: &[(String, Vec<f64>)],
    test: &DesignMatrix,
    nominal_level: f64,
) -> Result<MetricsReport> {
    if !(nominal_level > 0.0 && nominal_level < 1.0) {
        return Err(Error::Usage(format!(
            "nominal level {nominal_level} outside (0,1)"
        )));
    }
    let y = test.y.as_slice().unwrap();
    let n = y.len();
    let alpha_low = (1.0 - nominal_level) / 2.0;
    let alpha_high = 1.0 - alpha_low;
    let levels = default_levels();

    let mut rows = Vec::new();
    for (name, model) in models {
        let mut means = Vec::with_capacity(n);
        let mut medians = Vec::with_capacity(n);
        let mut pits = Vec::with_capacity(n);
        let mut lowers = Vec::with_capacity(n);
        let mut uppers = Vec::with_capacity(n);
        for i in 0..n {
            let dist = model.predict_dist(&test.row(i))?;
            let (mean, median) = dist.summary()?;
            means.push(mean);
            medians.push(median);
            pits.push(pit(&dist, y[i])?);
            lowers.push(dist.quantile(alpha_low)?);
            uppers.push(dist.quantile(alpha_high)?);
        }
        let curve = calibration_curve(&pits, &levels)?;
        rows.push(ReportRow {
            model: name.clone(),
            r2_mean: Some(r2(y, &means)?),
            mape_mean: Some(mape(y, &means)?),
            r2_median: Some(r2(y, &medians)?),
            mape_median: Some(mape(y, &medians)?),
            calibration_error: Some(calibration_error(&curve)),
            coverage: Some(interval_coverage(y, &lowers, &uppers)?),
        });
    }
    for (name, yhat) in point_baselines {
        if yhat.len() != n {
            return Err(Error::Data(format!(
                "baseline '{name}' has {} predictions for {n} test rows",
                yhat.len()
            )));
        }
        rows.push(ReportRow {
            model: name.clone(),
            r2_mean: Some(r2(y, yhat)?),
            mape_mean: Some(mape(y, yhat)?),
            r2_median: None,
            mape_median: None,
            calibration_error: None,
            coverage: None,
        });
    }
    Ok(MetricsReport {
        rows,
        n_test: n,
        nominal_level,
    })
}

/// Status-quo predictions straight from the ingested column.
pub fn statusquo_baseline(test: &DesignMatrix) -> Result<Vec<f64>> {
    test.statusquo
        .as_ref()
        .map(|v| v.to_vec())
        .ok_or_else(|| Error::Data("dataset has no status-quo column".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{encode, generate_synthetic, synthetic_latent_scales};
    use approx::assert_abs_diff_eq;

    #[test]
    fn r2_hand_values() {
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        let y = [0.0, 1.0, 2.0];
        assert_eq!(r2(&y, &[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(r2(&y, &[0.0, 1.0, 1.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert!(r2(&[2.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn mape_hand_values() {
        assert_eq!(mape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            mape(&[1.0, 2.0], &[1.1, 1.8]).unwrap(),
            10.0,
            epsilon = 1e-12
        );
        let y = [1.0, 5.0, 0.25];
        let yhat: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        assert_abs_diff_eq!(mape(&y, &yhat).unwrap(), 100.0, epsilon = 1e-12);
        assert!(mape(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn r2_shift_invariant_mape_not() {
        let y = [1.0, 2.0, 4.0];
        let yhat = [1.2, 1.9, 4.3];
        let shift = 10.0;
        let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let yhs: Vec<f64> = yhat.iter().map(|v| v + shift).collect();
        assert_abs_diff_eq!(
            r2(&y, &yhat).unwrap(),
            r2(&ys, &yhs).unwrap(),
            epsilon = 1e-12
        );
        assert!((mape(&y, &yhat).unwrap() - mape(&ys, &yhs).unwrap()).abs() > 1e-6);
    }

    #[test]
    fn coverage_hand_values() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(
            interval_coverage(&y, &[0.0, 0.0, 0.0], &[9.0, 9.0, 9.0]).unwrap(),
            1.0
        );
        // Boundary counts as covered.
        assert_eq!(
            interval_coverage(&[2.0], &[2.0], &[2.0]).unwrap(),
            1.0
        );
        assert!(interval_coverage(&y, &[1.0, 1.0, 5.0], &[2.0, 2.0, 4.0]).is_err());
    }

    #[test]
    fn true_law_intervals_cover_at_nominal_rate() {
        let ds = generate_synthetic(10_000, 23, 0.0).unwrap();
        let scales = synthetic_latent_scales(&ds).unwrap();
        let y: Vec<f64> = ds.rows.iter().map(|r| r.target.unwrap()).collect();
        let lowers: Vec<f64> = scales.iter().map(|s| -s * (0.95f64).ln()).collect();
        let uppers: Vec<f64> = scales.iter().map(|s| -s * (0.05f64).ln()).collect();
        let cov = interval_coverage(&y, &lowers, &uppers).unwrap();
        assert!(
            (0.88..=0.92).contains(&cov),
            "coverage {cov} outside [0.88, 0.92]"
        );
    }

    fn toy_dm(x: Vec<Vec<f64>>, y: Vec<f64>) -> DesignMatrix {
        let n = x.len();
        let d = x[0].len();
        let arr = ndarray::Array2::from_shape_fn((n, d), |(i, j)| x[i][j]);
        DesignMatrix {
            x: arr,
            y: ndarray::Array1::from(y),
            statusquo: None,
            feature_names: (0..d).map(|j| format!("f{j}")).collect(),
            encoder: crate::dataset::EncoderState {
                columns: vec![],
                feature_names: vec![],
                warnings: vec![],
            },
        }
    }

    #[test]
    fn linreg_recovers_exact_line() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.5]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - 3.0).collect();
        let model = fit_linreg(&toy_dm(x, y)).unwrap();
        assert_abs_diff_eq!(model.coefficients[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(model.intercept, -3.0, epsilon = 1e-6);
    }

    #[test]
    fn linreg_handles_duplicate_columns() {
        let x: Vec<Vec<f64>> = (0..15)
            .map(|i| {
                let v = i as f64;
                vec![v, v]
            })
            .collect();
        let y: Vec<f64> = (0..15).map(|i| 3.0 * i as f64 + 1.0).collect();
        let model = fit_linreg(&toy_dm(x, y)).unwrap();
        assert!(model.coefficients.iter().all(|c| c.is_finite()));
        let pred = model.predict_row(&[7.0, 7.0]).unwrap();
        assert_abs_diff_eq!(pred, 22.0, epsilon = 1e-4);
    }

    #[test]
    fn linreg_orthogonal_targets_yield_mean() {
        // y has no linear relation to the centered column.
        let x = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let y = vec![2.0, 8.0, 2.0];
        let model = fit_linreg(&toy_dm(x, y)).unwrap();
        assert_abs_diff_eq!(model.coefficients[0], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(model.intercept, 4.0, epsilon = 1e-6);
    }

    #[test]
    fn report_gaussian_models_have_equal_mean_median_metrics() {
        let ds = generate_synthetic(200, 40, 0.0).unwrap();
        let (dm, _) = encode(&ds, &[]).unwrap();
        let predictor = |_x: &[f64]| PredictiveDistribution::gaussian(4.0, 1.5);
        let models: Vec<(String, &dyn DistPredictor)> =
            vec![("gauss".into(), &predictor as &dyn DistPredictor)];
        let report = build_report(&models, &[], &dm, 0.9).unwrap();
        let row = report.row("gauss").unwrap();
        assert_eq!(row.r2_mean, row.r2_median);
        assert_eq!(row.mape_mean, row.mape_median);
    }

    #[test]
    fn report_statusquo_row_is_mean_only() {
        let ds = generate_synthetic(100, 41, 0.0).unwrap();
        let (dm, _) = encode(&ds, &[]).unwrap();
        let sq = statusquo_baseline(&dm).unwrap();
        let report = build_report(&[], &[("statusquo".into(), sq)], &dm, 0.9).unwrap();
        let row = report.row("statusquo").unwrap();
        assert!(row.r2_mean.is_some());
        assert!(row.mape_mean.is_some());
        assert!(row.r2_median.is_none());
        assert!(row.coverage.is_none());
        // CSV leaves the absent cells empty.
        let csv = report.to_csv();
        let line = csv.lines().nth(1).unwrap();
        assert!(line.ends_with(",,,,"));
    }

    #[test]
    fn report_oracle_predictor_scores_perfectly() {
        let ds = generate_synthetic(50, 42, 0.0).unwrap();
        let (dm, _) = encode(&ds, &[]).unwrap();
        let y = dm.y.clone();
        let x = dm.x.clone();
        let oracle = move |row: &[f64]| {
            let i = (0..x.nrows())
                .find(|&i| x.row(i).iter().zip(row).all(|(a, b)| a == b))
                .unwrap();
            PredictiveDistribution::gaussian(y[i], 1e-3)
        };
        let models: Vec<(String, &dyn DistPredictor)> =
            vec![("oracle".into(), &oracle as &dyn DistPredictor)];
        let report = build_report(&models, &[], &dm, 0.9).unwrap();
        let row = report.row("oracle").unwrap();
        assert_abs_diff_eq!(row.r2_mean.unwrap(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(row.mape_mean.unwrap(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn exponential_median_below_mean_elementwise() {
        for scale in [0.5, 4.16, 20.0] {
            let d = PredictiveDistribution::exponential(scale).unwrap();
            let (mean, median) = d.summary().unwrap();
            assert!(median < mean);
        }
    }

    #[test]
    fn report_is_deterministic() {
        let ds = generate_synthetic(80, 44, 0.0).unwrap();
        let (dm, _) = encode(&ds, &[]).unwrap();
        let predictor = |_x: &[f64]| PredictiveDistribution::exponential(4.0);
        let models: Vec<(String, &dyn DistPredictor)> =
            vec![("exp".into(), &predictor as &dyn DistPredictor)];
        let a = build_report(&models, &[], &dm, 0.9).unwrap();
        let b = build_report(&models, &[], &dm, 0.9).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }
}
