//! Flat key-value run configuration and the schema file format.
//!
//! Config files are `key = value` lines with `#` comments. Unknown keys are
//! rejected, and every value is type-checked against the selected model kind.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dataset::{ColumnKind, FeatureSchema, SplitSpec};
use crate::dist::Family;
use crate::error::{Error, Result};
use crate::gp::SvgpConfig;
use crate::ngboost::NGBoostConfig;
use crate::pnn::MLPConfig;
use crate::quantile_gb::{GBConfig, Loss};
use crate::tree::{MaxFeatures, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    NgBoostExp,
    NgBoostNormal,
    Pnn,
    Svgp,
    Qgb,
    LinReg,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::NgBoostExp => "ngboost-exp",
            ModelKind::NgBoostNormal => "ngboost-normal",
            ModelKind::Pnn => "pnn",
            ModelKind::Svgp => "svgp",
            ModelKind::Qgb => "qgb",
            ModelKind::LinReg => "linreg",
        }
    }

    pub fn all() -> [ModelKind; 6] {
        [
            ModelKind::NgBoostExp,
            ModelKind::NgBoostNormal,
            ModelKind::Pnn,
            ModelKind::Svgp,
            ModelKind::Qgb,
            ModelKind::LinReg,
        ]
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ngboost-exp" => Ok(ModelKind::NgBoostExp),
            "ngboost-normal" => Ok(ModelKind::NgBoostNormal),
            "pnn" => Ok(ModelKind::Pnn),
            "svgp" => Ok(ModelKind::Svgp),
            "qgb" => Ok(ModelKind::Qgb),
            "linreg" => Ok(ModelKind::LinReg),
            other => Err(Error::Usage(format!(
                "unknown model kind '{other}' (expected one of ngboost-exp, ngboost-normal, pnn, svgp, qgb, linreg)"
            ))),
        }
    }
}

/// Parsed key-value pairs plus the typed views extracted from them.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub split: SplitSpec,
    pub calibrate: bool,
    pub calibration_fraction: f64,
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub qgb_grid: bool,
    entries: BTreeMap<String, String>,
}

const COMMON_KEYS: [&str; 5] = [
    "seed",
    "test_fraction",
    "folds",
    "calibrate",
    "calibration_fraction",
];

fn allowed_keys(kind: ModelKind) -> Vec<&'static str> {
    let mut keys: Vec<&'static str> = COMMON_KEYS.to_vec();
    match kind {
        ModelKind::NgBoostExp | ModelKind::NgBoostNormal => keys.extend([
            "n_estimators",
            "learning_rate",
            "max_depth",
            "min_samples_leaf",
            "min_samples_split",
            "max_features",
            "subsample",
        ]),
        ModelKind::Qgb => keys.extend([
            "n_estimators",
            "learning_rate",
            "max_depth",
            "min_samples_leaf",
            "min_samples_split",
            "max_features",
            "subsample",
            "alpha_low",
            "alpha_high",
            "grid",
        ]),
        ModelKind::Pnn => keys.extend(["hidden", "l2", "learning_rate", "epochs", "batch_size"]),
        ModelKind::Svgp => keys.extend(["inducing", "batch_size", "learning_rate", "steps"]),
        ModelKind::LinReg => {}
    }
    keys
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Usage(format!(
                "config line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Usage(format!("config key '{key}' given twice")));
        }
    }
    Ok(map)
}

impl RunConfig {
    /// Defaults for a model kind with no config file.
    pub fn defaults(kind: ModelKind) -> Self {
        Self {
            kind,
            split: SplitSpec::default(),
            calibrate: false,
            calibration_fraction: 0.2,
            alpha_low: 0.05,
            alpha_high: 0.95,
            qgb_grid: false,
            entries: BTreeMap::new(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>, kind: ModelKind) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_text(&text, kind)
    }

    pub fn from_text(text: &str, kind: ModelKind) -> Result<Self> {
        let entries = parse_kv(text)?;
        let allowed = allowed_keys(kind);
        for key in entries.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Usage(format!(
                    "unknown config key '{key}' for model kind '{}'",
                    kind.as_str()
                )));
            }
        }
        let mut config = Self::defaults(kind);
        config.entries = entries;
        config.split = SplitSpec {
            test_fraction: config.get_f64("test_fraction")?.unwrap_or(0.2),
            seed: config.get_u64("seed")?.unwrap_or(0),
            fold_count: config.get_usize("folds")?.unwrap_or(3),
        };
        config.calibrate = config.get_bool("calibrate")?.unwrap_or(false);
        config.calibration_fraction = config.get_f64("calibration_fraction")?.unwrap_or(0.2);
        config.alpha_low = config.get_f64("alpha_low")?.unwrap_or(0.05);
        config.alpha_high = config.get_f64("alpha_high")?.unwrap_or(0.95);
        config.qgb_grid = config.get_bool("grid")?.unwrap_or(false);

        // Fail fast on badly typed model keys instead of at fit time.
        match kind {
            ModelKind::NgBoostExp | ModelKind::NgBoostNormal => {
                config.ngboost_config()?;
            }
            ModelKind::Qgb => {
                config.gb_config()?;
            }
            ModelKind::Pnn => {
                config.pnn_config(0)?;
            }
            ModelKind::Svgp => {
                config.svgp_config(0)?;
            }
            ModelKind::LinReg => {}
        }
        Ok(config)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Usage(format!("config key '{key}': '{v}' is not a number")))
            })
            .transpose()
    }

    fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>().map_err(|_| {
                    Error::Usage(format!("config key '{key}': '{v}' is not an integer"))
                })
            })
            .transpose()
    }

    fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.get_u64(key)?.map(|v| v as usize))
    }

    fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(Error::Usage(format!(
                    "config key '{key}': '{other}' is not a boolean"
                ))),
            })
            .transpose()
    }

    fn tree_config(&self, defaults: TreeConfig) -> Result<TreeConfig> {
        let max_features = match self.get("max_features") {
            None => defaults.max_features,
            Some("all") => MaxFeatures::All,
            Some(v) => MaxFeatures::Count(v.parse::<usize>().map_err(|_| {
                Error::Usage(format!(
                    "config key 'max_features': '{v}' is not an integer or 'all'"
                ))
            })?),
        };
        Ok(TreeConfig {
            max_depth: self.get_usize("max_depth")?.unwrap_or(defaults.max_depth),
            min_samples_split: self
                .get_usize("min_samples_split")?
                .unwrap_or(defaults.min_samples_split),
            min_samples_leaf: self
                .get_usize("min_samples_leaf")?
                .unwrap_or(defaults.min_samples_leaf),
            max_features,
        })
    }

    pub fn ngboost_config(&self) -> Result<NGBoostConfig> {
        let family = match self.kind {
            ModelKind::NgBoostExp => Family::Exponential,
            ModelKind::NgBoostNormal => Family::Gaussian,
            other => {
                return Err(Error::Usage(format!(
                    "model kind '{}' is not an ngboost variant",
                    other.as_str()
                )))
            }
        };
        let defaults = NGBoostConfig::defaults(family);
        Ok(NGBoostConfig {
            family,
            n_estimators: self
                .get_usize("n_estimators")?
                .unwrap_or(defaults.n_estimators),
            learning_rate: self
                .get_f64("learning_rate")?
                .unwrap_or(defaults.learning_rate),
            tree: self.tree_config(defaults.tree)?,
            subsample: self.get_f64("subsample")?.unwrap_or(defaults.subsample),
            natural_gradient: true,
        })
    }

    pub fn gb_config(&self) -> Result<GBConfig> {
        let defaults = GBConfig::defaults(Loss::Squared);
        Ok(GBConfig {
            loss: Loss::Squared,
            learning_rate: self
                .get_f64("learning_rate")?
                .unwrap_or(defaults.learning_rate),
            n_estimators: self
                .get_usize("n_estimators")?
                .unwrap_or(defaults.n_estimators),
            subsample: self.get_f64("subsample")?.unwrap_or(defaults.subsample),
            tree: self.tree_config(defaults.tree)?,
        })
    }

    pub fn pnn_config(&self, seed: u64) -> Result<MLPConfig> {
        let defaults = MLPConfig::default();
        let hidden = match self.get("hidden") {
            None => defaults.hidden,
            Some(list) => list
                .split(',')
                .map(|t| {
                    t.trim().parse::<usize>().map_err(|_| {
                        Error::Usage(format!(
                            "config key 'hidden': '{t}' is not an integer width"
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(MLPConfig {
            hidden,
            l2: self.get_f64("l2")?.unwrap_or(defaults.l2),
            learning_rate: self
                .get_f64("learning_rate")?
                .unwrap_or(defaults.learning_rate),
            epochs: self.get_usize("epochs")?.unwrap_or(defaults.epochs),
            batch_size: self.get_usize("batch_size")?.unwrap_or(defaults.batch_size),
            seed,
        })
    }

    pub fn svgp_config(&self, seed: u64) -> Result<SvgpConfig> {
        let defaults = SvgpConfig::default();
        Ok(SvgpConfig {
            inducing: self.get_usize("inducing")?.unwrap_or(defaults.inducing),
            batch_size: self.get_usize("batch_size")?.unwrap_or(defaults.batch_size),
            learning_rate: self
                .get_f64("learning_rate")?
                .unwrap_or(defaults.learning_rate),
            steps: self.get_usize("steps")?.unwrap_or(defaults.steps),
            seed,
            optimize_hyperparams: true,
            standardize_y: true,
        })
    }

    /// Effective settings echoed by the train command.
    pub fn echo(&self, seed: u64) -> Result<String> {
        let mut lines = vec![
            format!("model = {}", self.kind.as_str()),
            format!("seed = {seed}"),
            format!("test_fraction = {}", self.split.test_fraction),
            format!("folds = {}", self.split.fold_count),
            format!("calibrate = {}", self.calibrate),
        ];
        match self.kind {
            ModelKind::NgBoostExp | ModelKind::NgBoostNormal => {
                let c = self.ngboost_config()?;
                lines.push(format!("n_estimators = {}", c.n_estimators));
                lines.push(format!("learning_rate = {}", c.learning_rate));
                lines.push(format!("max_depth = {}", c.tree.max_depth));
                lines.push(format!("subsample = {}", c.subsample));
            }
            ModelKind::Qgb => {
                let c = self.gb_config()?;
                lines.push(format!("n_estimators = {}", c.n_estimators));
                lines.push(format!("learning_rate = {}", c.learning_rate));
                lines.push(format!("max_depth = {}", c.tree.max_depth));
                lines.push(format!(
                    "max_features = {}",
                    match c.tree.max_features {
                        MaxFeatures::All => "all".to_string(),
                        MaxFeatures::Count(k) => k.to_string(),
                    }
                ));
                lines.push(format!("min_samples_leaf = {}", c.tree.min_samples_leaf));
                lines.push(format!("min_samples_split = {}", c.tree.min_samples_split));
                lines.push(format!("subsample = {}", c.subsample));
                lines.push(format!("alpha_low = {}", self.alpha_low));
                lines.push(format!("alpha_high = {}", self.alpha_high));
                lines.push(format!("grid = {}", self.qgb_grid));
            }
            ModelKind::Pnn => {
                let c = self.pnn_config(seed)?;
                let widths: Vec<String> = c.hidden.iter().map(|w| w.to_string()).collect();
                lines.push(format!("hidden = {}", widths.join(",")));
                lines.push(format!("l2 = {}", c.l2));
                lines.push(format!("learning_rate = {}", c.learning_rate));
                lines.push(format!("epochs = {}", c.epochs));
                lines.push(format!("batch_size = {}", c.batch_size));
            }
            ModelKind::Svgp => {
                let c = self.svgp_config(seed)?;
                lines.push(format!("inducing = {}", c.inducing));
                lines.push(format!("batch_size = {}", c.batch_size));
                lines.push(format!("learning_rate = {}", c.learning_rate));
                lines.push(format!("steps = {}", c.steps));
            }
            ModelKind::LinReg => {}
        }
        Ok(lines.join("\n"))
    }
}

/// Schema files: `column = numeric|categorical|target|statusquo` lines.
pub fn schema_from_text(text: &str) -> Result<FeatureSchema> {
    let entries = parse_kv(text)?;
    let mut columns = Vec::new();
    let mut target = None;
    let mut statusquo = None;
    for (name, kind) in &entries {
        match kind.as_str() {
            "numeric" => columns.push((name.clone(), ColumnKind::Numeric)),
            "categorical" => columns.push((name.clone(), ColumnKind::Categorical)),
            "target" => {
                if target.replace(name.clone()).is_some() {
                    return Err(Error::Usage("schema declares two target columns".into()));
                }
            }
            "statusquo" => {
                if statusquo.replace(name.clone()).is_some() {
                    return Err(Error::Usage(
                        "schema declares two status-quo columns".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Usage(format!(
                    "schema column '{name}': unknown kind '{other}'"
                )))
            }
        }
    }
    let target = target.ok_or_else(|| Error::Usage("schema has no target column".into()))?;
    FeatureSchema::new(columns, target, statusquo)
}

pub fn schema_from_file(path: impl AsRef<Path>) -> Result<FeatureSchema> {
    schema_from_text(&std::fs::read_to_string(path.as_ref())?)
}
