//! Versioned, human-readable model persistence. Serialization is JSON with
//! shortest round-trip floats, so save -> load -> predict is bit-stable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationMap;
use crate::dataset::{EncoderState, FeatureSchema, SplitSpec};
use crate::dist::PredictiveDistribution;
use crate::error::{Error, Result};
use crate::eval::LinRegModel;
use crate::gp::{predict_dist_svgp, SvgpModel};
use crate::ngboost::{predict_dist_ngboost, NGBoostModel};
use crate::pnn::{predict_dist_pnn, MLPModel};
use crate::quantile_gb::{predict_qgb, QGBModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelPayload {
    NgBoost(NGBoostModel),
    Pnn(MLPModel),
    Svgp(SvgpModel),
    Qgb(QGBModel),
    LinReg(LinRegModel),
}

impl ModelPayload {
    /// Predictive distribution for an encoded row; the linear-regression
    /// baseline is point-only and reports an error here.
    pub fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        match self {
            ModelPayload::NgBoost(m) => predict_dist_ngboost(m, x),
            ModelPayload::Pnn(m) => predict_dist_pnn(m, x),
            ModelPayload::Svgp(m) => predict_dist_svgp(m, x),
            ModelPayload::Qgb(m) => predict_qgb(m, x),
            ModelPayload::LinReg(_) => Err(Error::Usage(
                "linear regression is a point baseline without a predictive distribution".into(),
            )),
        }
    }

    /// Point prediction (distribution mean, or the raw linear output).
    pub fn predict_point(&self, x: &[f64]) -> Result<f64> {
        match self {
            ModelPayload::LinReg(m) => m.predict_row(x),
            other => Ok(other.predict_dist(x)?.summary()?.0),
        }
    }

    pub fn is_point_only(&self) -> bool {
        matches!(self, ModelPayload::LinReg(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedModel {
    pub format_version: u32,
    pub model_kind: String,
    pub schema: FeatureSchema,
    pub encoder: EncoderState,
    /// Split used at training time; evaluation re-derives the same test set
    /// from it instead of trusting the caller.
    pub split: SplitSpec,
    /// Whether a calibration holdout was carved out of the train set.
    pub holdout_calibration: bool,
    pub calibration_fraction: f64,
    pub payload: ModelPayload,
    pub calibration_map: Option<CalibrationMap>,
}

impl PersistedModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Usage(format!(
                "cannot write format version {}",
                self.format_version
            )));
        }
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let model: PersistedModel = serde_json::from_str(&text)?;
        if model.format_version != FORMAT_VERSION {
            return Err(Error::Usage(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                model.format_version
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{encode, generate_synthetic};
    use crate::dist::Family;
    use crate::ngboost::{fit_ngboost, NGBoostConfig};
    use tempfile::tempdir;

    #[test]
    fn save_load_roundtrip_bitwise_predictions() {
        let ds = generate_synthetic(150, 50, 0.0).unwrap();
        let (dm, _) = encode(&ds, &[]).unwrap();
        let cfg = NGBoostConfig {
            n_estimators: 20,
            ..NGBoostConfig::defaults(Family::Exponential)
        };
        let model = fit_ngboost(&dm, &cfg, 0).unwrap();
        let persisted = PersistedModel {
            format_version: FORMAT_VERSION,
            model_kind: "ngboost-exp".into(),
            schema: ds.schema.clone(),
            encoder: dm.encoder.clone(),
            split: SplitSpec::default(),
            holdout_calibration: false,
            calibration_fraction: 0.2,
            payload: ModelPayload::NgBoost(model),
            calibration_map: None,
        };

        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        persisted.save(&path).unwrap();
        let loaded = PersistedModel::load(&path).unwrap();
        assert_eq!(persisted, loaded);
        for i in 0..dm.n().min(20) {
            let a = persisted.payload.predict_point(&dm.row(i)).unwrap();
            let b = loaded.payload.predict_point(&dm.row(i)).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let ds = generate_synthetic(20, 51, 0.0).unwrap();
        let (dm, _) = encode(&ds, &[]).unwrap();
        let linreg = crate::eval::fit_linreg(&dm).unwrap();
        let mut persisted = PersistedModel {
            format_version: FORMAT_VERSION,
            model_kind: "linreg".into(),
            schema: ds.schema,
            encoder: dm.encoder,
            split: SplitSpec::default(),
            holdout_calibration: false,
            calibration_fraction: 0.2,
            payload: ModelPayload::LinReg(linreg),
            calibration_map: None,
        };
        persisted.format_version = 99;
        assert!(persisted.save(&path).is_err());
    }
}
