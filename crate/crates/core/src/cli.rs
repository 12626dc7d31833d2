//! Command implementations behind the `leadtime` binary: generate, train,
//! predict, evaluate, calibrate, and calib-curve.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::calibration::{
    calibration_curve, calibration_error, default_levels, fit_isotonic, pit, recalibrate,
    CalibrationCurve,
};
use crate::config::{schema_from_file, ModelKind, RunConfig};
use crate::dataset::{
    self, clean, generate_synthetic_with_summary, load_csv, synthetic_schema, Dataset,
    DesignMatrix, EncoderState, SplitSpec,
};
use crate::dist::PredictiveDistribution;
use crate::error::{Error, Result};
use crate::eval::{build_report, fit_linreg, statusquo_baseline, DistPredictor, MetricsReport};
use crate::gp::fit_svgp;
use crate::ngboost::{fit_ngboost, training_nll_trace};
use crate::persist::{ModelPayload, PersistedModel, FORMAT_VERSION};
use crate::plot::reliability_diagram;
use crate::pnn::train_pnn;
use crate::quantile_gb::{fit_gb, fit_qgb, Loss, QGBModel};

pub fn cmd_generate(n: usize, seed: u64, contamination: f64, out: &Path) -> Result<()> {
    let (ds, summary) = generate_synthetic_with_summary(n, seed, contamination)?;
    let file = std::fs::File::create(out)?;
    dataset::write_csv(&ds, file)?;
    let targets = ds.targets();
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    println!(
        "wrote {} rows to {} (mean target {:.3} min, {} contaminated)",
        summary.n,
        out.display(),
        mean,
        summary.contaminated
    );
    Ok(())
}

fn load_and_clean(data: &Path, schema: &crate::dataset::FeatureSchema) -> Result<Dataset> {
    let raw = load_csv(data, schema)?;
    let (cleaned, report) = clean(&raw)?;
    if report.removed_total() > 0 {
        eprintln!(
            "cleaned {} -> {} rows ({} nonpositive target, {} missing, {} nonpositive status quo)",
            report.n_before,
            report.n_after,
            report.removed_nonpositive_target,
            report.removed_missing_value,
            report.removed_nonpositive_statusquo
        );
    }
    Ok(cleaned)
}

/// Calibration holdout carved from the train set with a derived seed.
fn calibration_split(train: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let spec = SplitSpec {
        test_fraction: fraction,
        seed: seed.wrapping_add(1),
        fold_count: 2,
    };
    let (fit_part, calib_part, _) = dataset::split_and_folds(train, &spec)?;
    Ok((fit_part, calib_part))
}

fn fit_payload(
    kind: ModelKind,
    config: &RunConfig,
    dm: &DesignMatrix,
    seed: u64,
) -> Result<(ModelPayload, String)> {
    match kind {
        ModelKind::NgBoostExp | ModelKind::NgBoostNormal => {
            let cfg = config.ngboost_config()?;
            let model = fit_ngboost(dm, &cfg, seed)?;
            let trace = training_nll_trace(&model, dm.x.view(), dm.y.as_slice().unwrap())?;
            let summary = format!(
                "train NLL {:.4} -> {:.4} over {} stages",
                trace.first().unwrap(),
                trace.last().unwrap(),
                model.stages.len()
            );
            Ok((ModelPayload::NgBoost(model), summary))
        }
        ModelKind::Pnn => {
            let cfg = config.pnn_config(seed)?;
            let (model, trace) = train_pnn(dm, &cfg)?;
            let summary = format!(
                "train loss {:.4} -> {:.4} over {} epochs",
                trace.epoch_loss.first().unwrap_or(&f64::NAN),
                trace.epoch_loss.last().unwrap_or(&f64::NAN),
                trace.epoch_loss.len()
            );
            Ok((ModelPayload::Pnn(model), summary))
        }
        ModelKind::Svgp => {
            let cfg = crate::gp::SvgpConfig {
                inducing: config.svgp_config(seed)?.inducing.min(dm.n()),
                ..config.svgp_config(seed)?
            };
            let model = fit_svgp(dm, &cfg)?;
            let x_mat = nalgebra::DMatrix::from_fn(dm.n(), dm.dim(), |i, j| dm.x[(i, j)]);
            let bound = crate::gp::elbo(&model, &x_mat, dm.y.as_slice().unwrap(), dm.n())?;
            Ok((
                ModelPayload::Svgp(model),
                format!("final ELBO {bound:.2} after {} steps", cfg.steps),
            ))
        }
        ModelKind::Qgb => {
            let cfg = config.gb_config()?;
            let grid_levels: Option<Vec<f64>> = if config.qgb_grid {
                Some(default_levels())
            } else {
                None
            };
            let model = fit_qgb(
                dm,
                config.alpha_low,
                config.alpha_high,
                &cfg,
                seed,
                grid_levels.as_deref(),
            )?;
            let summary = format!(
                "4 component models x {} stages{}",
                cfg.n_estimators,
                if model.grid.is_empty() {
                    String::new()
                } else {
                    format!(" + {} grid models", model.grid.len())
                }
            );
            Ok((ModelPayload::Qgb(model), summary))
        }
        ModelKind::LinReg => {
            let model = fit_linreg(dm)?;
            let summary = format!("{} coefficients", model.coefficients.len());
            Ok((ModelPayload::LinReg(model), summary))
        }
    }
}

pub fn cmd_train(
    kind: ModelKind,
    data: &Path,
    schema_path: Option<&Path>,
    config_path: Option<&Path>,
    seed_override: Option<u64>,
    out: &Path,
) -> Result<()> {
    let schema = match schema_path {
        Some(p) => schema_from_file(p)?,
        None => synthetic_schema(),
    };
    let mut config = match config_path {
        Some(p) => RunConfig::from_file(p, kind)?,
        None => RunConfig::defaults(kind),
    };
    if let Some(seed) = seed_override {
        config.split.seed = seed;
    }
    let seed = config.split.seed;
    println!("{}", config.echo(seed)?);

    let cleaned = load_and_clean(data, &schema)?;
    let (train, _test, _folds) = dataset::split_and_folds(&cleaned, &config.split)?;

    let (fit_set, calib_set) = if config.calibrate {
        let (a, b) = calibration_split(&train, config.calibration_fraction, seed)?;
        (a, Some(b))
    } else {
        (train, None)
    };

    let encoder = EncoderState::fit(&fit_set)?;
    for w in &encoder.warnings {
        eprintln!("warning: {w}");
    }
    let dm = encoder.transform(&fit_set)?;
    let (payload, fit_summary) = fit_payload(kind, &config, &dm, seed)?;
    println!("fit: {fit_summary}");

    let calibration_map = match (&calib_set, payload.is_point_only()) {
        (Some(calib), false) => {
            let calib_dm = encoder.transform(calib)?;
            let mut pits = Vec::with_capacity(calib_dm.n());
            for i in 0..calib_dm.n() {
                let dist = payload.predict_dist(&calib_dm.row(i))?;
                pits.push(pit(&dist, calib_dm.y[i])?);
            }
            let map = fit_isotonic(&pits)?;
            println!("fitted isotonic map on {} holdout rows", pits.len());
            Some(map)
        }
        _ => None,
    };

    let persisted = PersistedModel {
        format_version: FORMAT_VERSION,
        model_kind: kind.as_str().to_string(),
        schema,
        encoder,
        split: config.split,
        holdout_calibration: calib_set.is_some(),
        calibration_fraction: config.calibration_fraction,
        payload,
        calibration_map,
    };
    persisted.save(out)?;
    println!("saved model to {}", out.display());
    Ok(())
}

/// Test rows for a persisted model, re-derived from its stored split.
fn test_design(model: &PersistedModel, data: &Path) -> Result<DesignMatrix> {
    let cleaned = load_and_clean(data, &model.schema)?;
    let (_train, test, _) = dataset::split_and_folds(&cleaned, &model.split)?;
    model.encoder.transform(&test)
}

pub fn cmd_predict(model_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = PersistedModel::load(model_path)?;
    let cleaned = load_and_clean(data, &model.schema)?;
    let dm = model.encoder.transform(&cleaned)?;

    let mut file = std::fs::File::create(out)?;
    writeln!(file, "mean,median,q05,q50,q95,dist_kind,dist_params")?;
    for i in 0..dm.n() {
        let row = dm.row(i);
        if model.payload.is_point_only() {
            let mean = model.payload.predict_point(&row)?;
            writeln!(file, "{mean},,,,,point,")?;
            continue;
        }
        let dist = model.payload.predict_dist(&row)?;
        let (mean, median) = dist.summary()?;
        let q05 = dist.quantile(0.05)?;
        let q50 = dist.quantile(0.5)?;
        let q95 = dist.quantile(0.95)?;
        let (kind, params) = match &dist {
            PredictiveDistribution::Gaussian(g) => ("gaussian", format!("{};{}", g.mu, g.sigma)),
            PredictiveDistribution::Exponential(e) => ("exponential", format!("{}", e.scale)),
            PredictiveDistribution::Quantiles(_) => ("quantiles", String::new()),
        };
        writeln!(file, "{mean},{median},{q05},{q50},{q95},{kind},{params}")?;
    }
    println!("wrote {} predictions to {}", dm.n(), out.display());
    Ok(())
}

struct PayloadPredictor<'a> {
    payload: &'a ModelPayload,
    map: Option<&'a crate::calibration::CalibrationMap>,
}

impl DistPredictor for PayloadPredictor<'_> {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        let dist = self.payload.predict_dist(x)?;
        match self.map {
            Some(map) => recalibrate(&dist, map),
            None => Ok(dist),
        }
    }
}

fn model_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn curve_for(
    payload: &ModelPayload,
    map: Option<&crate::calibration::CalibrationMap>,
    test: &DesignMatrix,
) -> Result<CalibrationCurve> {
    let mut pits = Vec::with_capacity(test.n());
    for i in 0..test.n() {
        let mut dist = payload.predict_dist(&test.row(i))?;
        if let Some(m) = map {
            dist = recalibrate(&dist, m)?;
        }
        pits.push(pit(&dist, test.y[i])?);
    }
    calibration_curve(&pits, &default_levels())
}

pub fn cmd_evaluate(
    model_paths: &[PathBuf],
    data: &Path,
    nominal: f64,
    out_dir: &Path,
) -> Result<MetricsReport> {
    if model_paths.is_empty() {
        return Err(Error::Usage("evaluate needs at least one --model".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let models: Vec<(String, PersistedModel)> = model_paths
        .iter()
        .map(|p| Ok((model_stem(p), PersistedModel::load(p)?)))
        .collect::<Result<_>>()?;
    let split = models[0].1.split;
    for (name, m) in &models {
        if m.split != split {
            return Err(Error::Data(format!(
                "model '{name}' was trained with a different split; evaluation would leak training rows"
            )));
        }
    }

    let test = test_design(&models[0].1, data)?;

    let mut dist_models: Vec<(String, PayloadPredictor<'_>)> = Vec::new();
    let mut point_baselines: Vec<(String, Vec<f64>)> = Vec::new();
    for (name, m) in &models {
        if m.payload.is_point_only() {
            let mut preds = Vec::with_capacity(test.n());
            for i in 0..test.n() {
                preds.push(m.payload.predict_point(&test.row(i))?);
            }
            point_baselines.push((name.clone(), preds));
            continue;
        }
        dist_models.push((
            name.clone(),
            PayloadPredictor {
                payload: &m.payload,
                map: None,
            },
        ));
        if m.calibration_map.is_some() {
            dist_models.push((
                format!("{name}+recal"),
                PayloadPredictor {
                    payload: &m.payload,
                    map: m.calibration_map.as_ref(),
                },
            ));
        }
    }
    if let Ok(sq) = statusquo_baseline(&test) {
        point_baselines.push(("statusquo".into(), sq));
    }

    let trait_refs: Vec<(String, &dyn DistPredictor)> = dist_models
        .iter()
        .map(|(n, p)| (n.clone(), p as &dyn DistPredictor))
        .collect();
    let report = build_report(&trait_refs, &point_baselines, &test, nominal)?;

    std::fs::write(out_dir.join("report.csv"), report.to_csv())?;
    let mut curves = Vec::new();
    for (name, m) in &models {
        if m.payload.is_point_only() {
            continue;
        }
        let curve = curve_for(&m.payload, None, &test)?;
        let mut csv = String::from("level,empirical\n");
        for (p, e) in curve.levels.iter().zip(&curve.empirical) {
            csv.push_str(&format!("{p},{e}\n"));
        }
        std::fs::write(out_dir.join(format!("curve_{name}.csv")), csv)?;
        curves.push((name.clone(), curve));
        if let Some(map) = &m.calibration_map {
            let curve = curve_for(&m.payload, Some(map), &test)?;
            let mut csv = String::from("level,empirical\n");
            for (p, e) in curve.levels.iter().zip(&curve.empirical) {
                csv.push_str(&format!("{p},{e}\n"));
            }
            std::fs::write(out_dir.join(format!("curve_{name}+recal.csv")), csv)?;
            curves.push((format!("{name}+recal"), curve));
        }
    }
    std::fs::write(out_dir.join("reliability.svg"), reliability_diagram(&curves))?;

    print!("{}", report.to_text());
    println!(
        "wrote report.csv, {} curve files, reliability.svg to {}",
        curves.len(),
        out_dir.display()
    );
    Ok(report)
}

pub fn cmd_calibrate(model_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let mut model = PersistedModel::load(model_path)?;
    if model.payload.is_point_only() {
        return Err(Error::Usage(
            "linear regression has no predictive distribution to calibrate".into(),
        ));
    }
    if !model.holdout_calibration {
        eprintln!(
            "warning: model was trained on the full train split; the calibration rows below \
             were part of training"
        );
    }
    let cleaned = load_and_clean(data, &model.schema)?;
    let (train, _test, _) = dataset::split_and_folds(&cleaned, &model.split)?;
    let (_fit_part, calib_part) =
        calibration_split(&train, model.calibration_fraction, model.split.seed)?;
    let calib_dm = model.encoder.transform(&calib_part)?;

    let mut pits = Vec::with_capacity(calib_dm.n());
    for i in 0..calib_dm.n() {
        let dist = model.payload.predict_dist(&calib_dm.row(i))?;
        pits.push(pit(&dist, calib_dm.y[i])?);
    }
    let raw_curve = calibration_curve(&pits, &default_levels())?;
    model.calibration_map = Some(fit_isotonic(&pits)?);
    model.save(out)?;
    println!(
        "fitted isotonic map on {} rows (raw calibration error {:.4}); saved to {}",
        pits.len(),
        calibration_error(&raw_curve),
        out.display()
    );
    Ok(())
}

pub fn cmd_calib_curve(model_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = PersistedModel::load(model_path)?;
    if model.payload.is_point_only() {
        return Err(Error::Usage(
            "linear regression has no predictive distribution for a calibration curve".into(),
        ));
    }
    let test = test_design(&model, data)?;
    let curve = curve_for(&model.payload, model.calibration_map.as_ref(), &test)?;
    let mut csv = String::from("level,empirical\n");
    for (p, e) in curve.levels.iter().zip(&curve.empirical) {
        csv.push_str(&format!("{p},{e}\n"));
    }
    std::fs::write(out, csv)?;
    println!(
        "calibration error {:.4} over {} test rows; wrote {}",
        calibration_error(&curve),
        curve.n_eval,
        out.display()
    );
    Ok(())
}
