//! Dataset ingestion, validation, encoding, splitting, and the synthetic
//! lead-time generator.
//!
//! Cleaning drops rows with nonpositive targets or missing cells and keeps
//! heavy-tail rows; targets are never transformed. Numeric features are
//! standardized with train-set statistics (population standard deviation),
//! categoricals are one-hot encoded over the train vocabulary.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::std_normal_quantile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Declares feature columns plus the target and optional status-quo column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<(String, ColumnKind)>,
    pub target_column: String,
    pub statusquo_column: Option<String>,
}

impl FeatureSchema {
    pub fn new(
        columns: Vec<(String, ColumnKind)>,
        target_column: impl Into<String>,
        statusquo_column: Option<String>,
    ) -> Result<Self> {
        let target_column = target_column.into();
        let schema = Self {
            columns,
            target_column,
            statusquo_column,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, _) in &self.columns {
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("duplicate column name '{name}'")));
            }
        }
        if seen.contains(self.target_column.as_str()) {
            return Err(Error::Data(format!(
                "target column '{}' must not be listed among feature columns",
                self.target_column
            )));
        }
        if let Some(sq) = &self.statusquo_column {
            if seen.contains(sq.as_str()) {
                return Err(Error::Data(format!(
                    "status-quo column '{sq}' must not be listed among feature columns"
                )));
            }
            if *sq == self.target_column {
                return Err(Error::Data(
                    "status-quo column equals the target column".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellValue {
    Number(f64),
    Category(String),
    Missing,
}

/// One data row; `features` is aligned with the schema's column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<CellValue>,
    pub target: Option<f64>,
    pub statusquo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub rows: Vec<Sample>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.target).collect()
    }
}

/// Per-reason removal counts from `clean`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub n_before: usize,
    pub n_after: usize,
    pub removed_nonpositive_target: usize,
    pub removed_missing_value: usize,
    pub removed_nonpositive_statusquo: usize,
}

impl CleanReport {
    pub fn removed_total(&self) -> usize {
        self.removed_nonpositive_target
            + self.removed_missing_value
            + self.removed_nonpositive_statusquo
    }
}

/// Remove rows with nonpositive targets or any missing value; heavy-tail
/// rows are retained. Errors when nothing survives.
pub fn clean(ds: &Dataset) -> Result<(Dataset, CleanReport)> {
    let mut report = CleanReport {
        n_before: ds.n(),
        ..Default::default()
    };
    let needs_statusquo = ds.schema.statusquo_column.is_some();
    let mut rows = Vec::with_capacity(ds.rows.len());
    for row in &ds.rows {
        let missing_feature = row.features.iter().any(|c| matches!(c, CellValue::Missing));
        let missing = missing_feature
            || row.target.is_none()
            || (needs_statusquo && row.statusquo.is_none());
        if missing {
            report.removed_missing_value += 1;
            continue;
        }
        if row.target.unwrap() <= 0.0 {
            report.removed_nonpositive_target += 1;
            continue;
        }
        if needs_statusquo && row.statusquo.unwrap() <= 0.0 {
            report.removed_nonpositive_statusquo += 1;
            continue;
        }
        rows.push(row.clone());
    }
    report.n_after = rows.len();
    if rows.is_empty() {
        return Err(Error::Data(
            "cleaning removed every row of the dataset".into(),
        ));
    }
    Ok((
        Dataset {
            schema: ds.schema.clone(),
            rows,
        },
        report,
    ))
}

/// Fitted per-column standardization statistics and categorical vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnEncoder {
    Numeric {
        name: String,
        mean: f64,
        scale: f64,
    },
    Categorical {
        name: String,
        vocabulary: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub columns: Vec<ColumnEncoder>,
    pub feature_names: Vec<String>,
    pub warnings: Vec<String>,
}

impl EncoderState {
    /// Fit standardization means/scales and vocabularies on a cleaned train
    /// set. Zero-variance numeric columns keep scale 1 with a warning.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.rows.is_empty() {
            return Err(Error::Data("cannot fit an encoder on an empty set".into()));
        }
        let mut columns = Vec::new();
        let mut feature_names = Vec::new();
        let mut warnings = Vec::new();
        for (j, (name, kind)) in train.schema.columns.iter().enumerate() {
            match kind {
                ColumnKind::Numeric => {
                    let values: Vec<f64> = train
                        .rows
                        .iter()
                        .map(|r| match &r.features[j] {
                            CellValue::Number(v) => Ok(*v),
                            other => Err(Error::Data(format!(
                                "column '{name}' holds {other:?}; clean the dataset first"
                            ))),
                        })
                        .collect::<Result<_>>()?;
                    let n = values.len() as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let mut scale = var.sqrt();
                    if scale == 0.0 {
                        warnings.push(format!("numeric column '{name}' has zero variance"));
                        scale = 1.0;
                    }
                    columns.push(ColumnEncoder::Numeric {
                        name: name.clone(),
                        mean,
                        scale,
                    });
                    feature_names.push(name.clone());
                }
                ColumnKind::Categorical => {
                    let mut vocab = BTreeSet::new();
                    for r in &train.rows {
                        match &r.features[j] {
                            CellValue::Category(c) => {
                                vocab.insert(c.clone());
                            }
                            other => {
                                return Err(Error::Data(format!(
                                    "column '{name}' holds {other:?}; clean the dataset first"
                                )))
                            }
                        }
                    }
                    let vocabulary: Vec<String> = vocab.into_iter().collect();
                    for v in &vocabulary {
                        feature_names.push(format!("{name}={v}"));
                    }
                    columns.push(ColumnEncoder::Categorical {
                        name: name.clone(),
                        vocabulary,
                    });
                }
            }
        }
        Ok(Self {
            columns,
            feature_names,
            warnings,
        })
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Encode one row of schema-aligned cells into design-matrix coordinates.
    /// Unseen categories map to an all-zeros block.
    pub fn encode_row(&self, features: &[CellValue]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        for (j, enc) in self.columns.iter().enumerate() {
            match enc {
                ColumnEncoder::Numeric { name, mean, scale } => match &features[j] {
                    CellValue::Number(v) => out.push((v - mean) / scale),
                    other => {
                        return Err(Error::Data(format!(
                            "column '{name}' holds {other:?}; clean the dataset first"
                        )))
                    }
                },
                ColumnEncoder::Categorical { name, vocabulary } => match &features[j] {
                    CellValue::Category(c) => {
                        for v in vocabulary {
                            out.push(if v == c { 1.0 } else { 0.0 });
                        }
                    }
                    other => {
                        return Err(Error::Data(format!(
                            "column '{name}' holds {other:?}; clean the dataset first"
                        )))
                    }
                },
            }
        }
        Ok(out)
    }

    /// Encode a cleaned dataset; targets pass through untransformed.
    pub fn transform(&self, ds: &Dataset) -> Result<DesignMatrix> {
        let n = ds.n();
        let d = self.dim();
        let mut x = Array2::zeros((n, d));
        let mut y = Array1::zeros(n);
        for (i, row) in ds.rows.iter().enumerate() {
            let enc = self.encode_row(&row.features)?;
            for (j, v) in enc.into_iter().enumerate() {
                x[(i, j)] = v;
            }
            y[i] = row
                .target
                .ok_or_else(|| Error::Data(format!("row {} has no target", i + 1)))?;
        }
        let statusquo = if ds.schema.statusquo_column.is_some() {
            let vals: Option<Vec<f64>> = ds.rows.iter().map(|r| r.statusquo).collect();
            vals.map(Array1::from)
        } else {
            None
        };
        Ok(DesignMatrix {
            x,
            y,
            statusquo,
            feature_names: self.feature_names.clone(),
            encoder: self.clone(),
        })
    }
}

/// Encoded numeric form of a dataset.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub statusquo: Option<Array1<f64>>,
    pub feature_names: Vec<String>,
    pub encoder: EncoderState,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).to_vec()
    }
}

/// Fit the encoder on `train` and encode `train` plus any other datasets
/// with the train-set statistics.
pub fn encode(train: &Dataset, others: &[&Dataset]) -> Result<(DesignMatrix, Vec<DesignMatrix>)> {
    let enc = EncoderState::fit(train)?;
    let dm = enc.transform(train)?;
    let rest = others
        .iter()
        .map(|ds| enc.transform(ds))
        .collect::<Result<Vec<_>>>()?;
    Ok((dm, rest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    pub fold_count: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 0,
            fold_count: 3,
        }
    }
}

/// Seed-deterministic split result; `fold_of` is aligned with the train rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub spec: SplitSpec,
    pub fold_of: Vec<usize>,
}

/// Shuffled train/test split plus balanced cross-validation folds over the
/// train part. Row order within each part keeps the original dataset order.
pub fn split_and_folds(
    ds: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, SplitAssignment)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Usage(format!(
            "test fraction {} outside (0,1)",
            spec.test_fraction
        )));
    }
    if spec.fold_count < 2 {
        return Err(Error::Usage("fold count must be at least 2".into()));
    }
    let n = ds.n();
    if (n as f64) < spec.fold_count as f64 / (1.0 - spec.test_fraction) {
        return Err(Error::Data(format!(
            "dataset of {n} rows is too small for {} folds at test fraction {}",
            spec.fold_count, spec.test_fraction
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_test = (n as f64 * spec.test_fraction).round() as usize;

    let mut test_idx: Vec<usize> = order[..n_test].to_vec();
    let mut train_idx: Vec<usize> = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    // Fold assignment: shuffle the train rows again, deal round-robin.
    let mut fold_order: Vec<usize> = (0..train_idx.len()).collect();
    fold_order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; train_idx.len()];
    for (pos, &slot) in fold_order.iter().enumerate() {
        fold_of[slot] = pos % spec.fold_count;
    }

    let take = |idx: &[usize]| Dataset {
        schema: ds.schema.clone(),
        rows: idx.iter().map(|&i| ds.rows[i].clone()).collect(),
    };
    Ok((
        take(&train_idx),
        take(&test_idx),
        SplitAssignment {
            spec: *spec,
            fold_of,
        },
    ))
}

const SYNTHETIC_MEAN_SCALE: f64 = 4.16;

/// Column names written by the synthetic generator.
pub fn synthetic_schema() -> FeatureSchema {
    FeatureSchema::new(
        vec![
            ("thickness".into(), ColumnKind::Numeric),
            ("holes".into(), ColumnKind::Numeric),
            ("cut_length".into(), ColumnKind::Numeric),
            ("area".into(), ColumnKind::Numeric),
            ("material".into(), ColumnKind::Categorical),
            ("gas".into(), ColumnKind::Categorical),
        ],
        "lead_time",
        Some("statusquo".into()),
    )
    .expect("static schema is valid")
}

fn poisson_inverse(u: f64, lambda: f64) -> f64 {
    let mut k = 0u32;
    let mut p = (-lambda).exp();
    let mut cum = p;
    while u > cum && k < 200 {
        k += 1;
        p *= lambda / k as f64;
        cum += p;
    }
    k as f64
}

fn materials() -> [&'static str; 3] {
    ["steel", "stainless", "aluminum"]
}

fn material_shift(material: &str) -> f64 {
    match material {
        "stainless" => 0.15,
        "aluminum" => -0.15,
        _ => 0.0,
    }
}

/// Latent Exponential scale per row, recomputed from the stored features:
/// batch z-scores of cut length, holes, and thickness plus a material shift,
/// normalized so the batch mean scale is exactly 4.16.
pub fn synthetic_latent_scales(ds: &Dataset) -> Result<Vec<f64>> {
    let col = |name: &str| -> Result<usize> {
        ds.schema
            .columns
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (i_th, i_ho, i_cl, i_mat) = (
        col("thickness")?,
        col("holes")?,
        col("cut_length")?,
        col("material")?,
    );
    let numbers = |j: usize| -> Result<Vec<f64>> {
        ds.rows
            .iter()
            .map(|r| match &r.features[j] {
                CellValue::Number(v) => Ok(*v),
                other => Err(Error::Data(format!("expected a number, found {other:?}"))),
            })
            .collect()
    };
    let thickness = numbers(i_th)?;
    let holes = numbers(i_ho)?;
    let cut_length = numbers(i_cl)?;

    let zscore = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        let sd = if sd == 0.0 { 1.0 } else { sd };
        v.iter().map(|x| (x - mean) / sd).collect::<Vec<f64>>()
    };
    let z_cl = zscore(&cut_length);
    let z_ho = zscore(&holes);
    let z_th = zscore(&thickness);

    let mut raw = Vec::with_capacity(ds.n());
    for (i, row) in ds.rows.iter().enumerate() {
        let m = match &row.features[i_mat] {
            CellValue::Category(c) => material_shift(c),
            other => return Err(Error::Data(format!("expected a category, found {other:?}"))),
        };
        raw.push((0.4 * z_cl[i] + 0.3 * z_ho[i] + 0.2 * z_th[i] + m).exp());
    }
    let mean_raw = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw
        .iter()
        .map(|r| SYNTHETIC_MEAN_SCALE * r / mean_raw)
        .collect())
}

/// What the generator drew, for the CLI summary line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSummary {
    pub n: usize,
    pub contaminated: usize,
}

/// Deterministic synthetic lead-time dataset.
///
/// Features: thickness ~ U(0.5,25) mm, holes ~ Poisson(8),
/// cut_length ~ LogNormal(ln 500, 0.6) mm, area = width*height with
/// width,height ~ U(10,1000) mm, material and gas uniform. Targets are
/// Exponential with the latent scale of [`synthetic_latent_scales`]; with
/// probability `contamination` a row is stretched by U(3,8) to mimic
/// external interruptions. The status-quo column is the target blurred by
/// exp(N(0, 0.45)) noise, truncated below at 0.1.
pub fn generate_synthetic(n: usize, seed: u64, contamination: f64) -> Result<Dataset> {
    generate_synthetic_with_summary(n, seed, contamination).map(|(ds, _)| ds)
}

/// As [`generate_synthetic`], also reporting the contaminated-row count.
pub fn generate_synthetic_with_summary(
    n: usize,
    seed: u64,
    contamination: f64,
) -> Result<(Dataset, SyntheticSummary)> {
    if n == 0 {
        return Err(Error::Usage("cannot generate an empty dataset".into()));
    }
    if !(0.0..=1.0).contains(&contamination) {
        return Err(Error::Usage(format!(
            "contamination {contamination} outside [0,1]"
        )));
    }
    let schema = synthetic_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| lo + (hi - lo) * rng.gen::<f64>();
    // Open-interval uniform for inverse-transform sampling.
    let unit = |rng: &mut ChaCha8Rng| rng.gen::<f64>().clamp(1e-15, 1.0 - 1e-15);

    let mut features: Vec<Vec<CellValue>> = Vec::with_capacity(n);
    for _ in 0..n {
        let thickness = uniform(&mut rng, 0.5, 25.0);
        let holes = poisson_inverse(rng.gen::<f64>(), 8.0);
        let cut_length = (500f64.ln() + 0.6 * std_normal_quantile(unit(&mut rng))).exp();
        let width = uniform(&mut rng, 10.0, 1000.0);
        let height = uniform(&mut rng, 10.0, 1000.0);
        let material = materials()[rng.gen_range(0..3)];
        let gas = if rng.gen::<f64>() < 0.5 { "O2" } else { "N2" };
        features.push(vec![
            CellValue::Number(thickness),
            CellValue::Number(holes),
            CellValue::Number(cut_length),
            CellValue::Number(width * height),
            CellValue::Category(material.to_string()),
            CellValue::Category(gas.to_string()),
        ]);
    }

    let mut ds = Dataset {
        schema,
        rows: features
            .into_iter()
            .map(|f| Sample {
                features: f,
                target: None,
                statusquo: None,
            })
            .collect(),
    };
    let scales = synthetic_latent_scales(&ds)?;

    // Noise std for the status-quo estimate: exp(N(0, 0.45)) with 0.45 read
    // as a variance, matching the N(mu, var) convention used elsewhere.
    let sq_sd = 0.45f64.sqrt();
    let mut contaminated = 0;
    for (i, row) in ds.rows.iter_mut().enumerate() {
        let mut target = -scales[i] * (1.0 - unit(&mut rng)).ln();
        if contamination > 0.0 && rng.gen::<f64>() < contamination {
            target *= uniform(&mut rng, 3.0, 8.0);
            contaminated += 1;
        }
        let sq = target * (sq_sd * std_normal_quantile(unit(&mut rng))).exp();
        row.target = Some(target);
        row.statusquo = Some(sq.max(0.1));
    }
    Ok((ds, SyntheticSummary { n, contaminated }))
}

fn parse_numeric_cell(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    trimmed
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::ParseCell {
            row,
            column: column.to_string(),
            value: trimmed.to_string(),
        })
}

/// Read a CSV file against a schema. Header matching is order-insensitive;
/// empty cells become missing values.
pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    load_csv_reader(file, schema)
}

pub fn load_csv_reader<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let feature_pos: Vec<usize> = schema
        .columns
        .iter()
        .map(|(name, _)| find(name))
        .collect::<Result<_>>()?;
    let target_pos = find(&schema.target_column)?;
    let statusquo_pos = schema.statusquo_column.as_deref().map(find).transpose()?;

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let mut features = Vec::with_capacity(schema.columns.len());
        for (pos, (name, kind)) in feature_pos.iter().zip(&schema.columns) {
            let raw = record.get(*pos).unwrap_or("");
            let cell = match kind {
                ColumnKind::Numeric => match parse_numeric_cell(raw, row_no, name)? {
                    Some(v) => CellValue::Number(v),
                    None => CellValue::Missing,
                },
                ColumnKind::Categorical => {
                    let trimmed = raw.trim();
                    if trimmed.is_empty() {
                        CellValue::Missing
                    } else {
                        CellValue::Category(trimmed.to_string())
                    }
                }
            };
            features.push(cell);
        }
        let target = parse_numeric_cell(
            record.get(target_pos).unwrap_or(""),
            row_no,
            &schema.target_column,
        )?;
        let statusquo = match statusquo_pos {
            Some(pos) => parse_numeric_cell(
                record.get(pos).unwrap_or(""),
                row_no,
                schema.statusquo_column.as_deref().unwrap(),
            )?,
            None => None,
        };
        rows.push(Sample {
            features,
            target,
            statusquo,
        });
    }
    Ok(Dataset {
        schema: schema.clone(),
        rows,
    })
}

/// Write a dataset as CSV with the schema's column order, then target and
/// status-quo columns. Floats use the shortest round-trip representation.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ds.schema.columns.iter().map(|(n, _)| n.clone()).collect();
    header.push(ds.schema.target_column.clone());
    if let Some(sq) = &ds.schema.statusquo_column {
        header.push(sq.clone());
    }
    wtr.write_record(&header)?;
    for row in &ds.rows {
        let mut record: Vec<String> = row
            .features
            .iter()
            .map(|c| match c {
                CellValue::Number(v) => format!("{v}"),
                CellValue::Category(c) => c.clone(),
                CellValue::Missing => String::new(),
            })
            .collect();
        record.push(row.target.map(|v| format!("{v}")).unwrap_or_default());
        if ds.schema.statusquo_column.is_some() {
            record.push(row.statusquo.map(|v| format!("{v}")).unwrap_or_default());
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}
