//! Probability integral transform, calibration curves, and isotonic
//! post-hoc recalibration via pool-adjacent-violators.

use serde::{Deserialize, Serialize};

use crate::dist::{PredictiveDistribution, QuantileSet};
use crate::error::{Error, Result};

/// Predicted-CDF level of the realized target. Parametric distributions use
/// their CDF; quantile sets invert the stored (level, value) polyline with
/// clamping at the extreme stored levels.
pub fn pit(dist: &PredictiveDistribution, y: f64) -> Result<f64> {
    match dist {
        PredictiveDistribution::Quantiles(q) => {
            if q.points.len() < 2 {
                return Err(Error::Data(
                    "PIT for a quantile set needs at least 2 levels".into(),
                ));
            }
            Ok(q.level_at(y))
        }
        parametric => parametric.cdf(y),
    }
}

/// Empirical frequency of `pit <= level` at each evaluation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub levels: Vec<f64>,
    pub empirical: Vec<f64>,
    pub n_eval: usize,
}

/// The 19-level grid 0.05..0.95 used by the reliability diagrams.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

pub fn calibration_curve(pits: &[f64], levels: &[f64]) -> Result<CalibrationCurve> {
    if pits.is_empty() {
        return Err(Error::Data("cannot build a curve from zero PITs".into()));
    }
    let n = pits.len();
    let empirical = levels
        .iter()
        .map(|&p| pits.iter().filter(|&&u| u <= p).count() as f64 / n as f64)
        .collect();
    Ok(CalibrationCurve {
        levels: levels.to_vec(),
        empirical,
        n_eval: n,
    })
}

/// Mean absolute gap between the curve and the diagonal.
pub fn calibration_error(curve: &CalibrationCurve) -> f64 {
    let k = curve.levels.len() as f64;
    curve
        .levels
        .iter()
        .zip(&curve.empirical)
        .map(|(p, e)| (e - p).abs())
        .sum::<f64>()
        / k
}

/// Weighted isotonic regression by pool-adjacent-violators: the
/// non-decreasing fit minimizing weighted squared error. Returns one fitted
/// value per input.
pub fn pav_nondecreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // Blocks of (mean, weight, count), pooled while out of order.
    let mut means: Vec<f64> = Vec::with_capacity(values.len());
    let mut ws: Vec<f64> = Vec::with_capacity(values.len());
    let mut counts: Vec<usize> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        means.push(v);
        ws.push(w);
        counts.push(1);
        while means.len() > 1 && means[means.len() - 2] > means[means.len() - 1] {
            let (m2, w2, c2) = (means.pop().unwrap(), ws.pop().unwrap(), counts.pop().unwrap());
            let last = means.len() - 1;
            let pooled_w = ws[last] + w2;
            means[last] = (means[last] * ws[last] + m2 * w2) / pooled_w;
            ws[last] = pooled_w;
            counts[last] += c2;
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (m, c) in means.iter().zip(&counts) {
        out.extend(std::iter::repeat(*m).take(*c));
    }
    out
}

/// Monotone map from predicted CDF level to empirical level, pinned at
/// (0,0) and (1,1), linearly interpolated between breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub breakpoints: Vec<(f64, f64)>,
}

impl CalibrationMap {
    pub fn identity() -> Self {
        Self {
            breakpoints: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }

    pub fn apply(&self, p: f64) -> f64 {
        let pts = &self.breakpoints;
        let p = p.clamp(0.0, 1.0);
        let idx = pts.partition_point(|&(x, _)| x < p);
        if idx == 0 {
            return pts[0].1;
        }
        if idx == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (x0, y0) = pts[idx - 1];
        let (x1, y1) = pts[idx];
        if x1 == x0 {
            return y1;
        }
        y0 + (y1 - y0) * (p - x0) / (x1 - x0)
    }

    /// Generalized inverse: the smallest input whose output reaches `q`.
    pub fn inverse(&self, q: f64) -> f64 {
        let pts = &self.breakpoints;
        let q = q.clamp(0.0, 1.0);
        let idx = pts.partition_point(|&(_, y)| y < q);
        if idx == 0 {
            return pts[0].0;
        }
        if idx == pts.len() {
            return pts[pts.len() - 1].0;
        }
        let (x0, y0) = pts[idx - 1];
        let (x1, y1) = pts[idx];
        if y1 == y0 {
            return x1;
        }
        x0 + (x1 - x0) * (q - y0) / (y1 - y0)
    }
}

/// Regress the empirical CDF of the PITs on the predicted level: sorted
/// PITs as inputs with targets (i+1)/n (ties averaged), PAV for monotonicity,
/// then pin (0,0) and (1,1).
pub fn fit_isotonic(pits: &[f64]) -> Result<CalibrationMap> {
    if pits.is_empty() {
        return Err(Error::Data("cannot fit a map on zero PITs".into()));
    }
    let n = pits.len();
    let mut sorted = pits.to_vec();
    sorted.sort_by(f64::total_cmp);

    // Collapse ties: average the empirical targets at equal inputs.
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        let mut acc = 0.0;
        while j < n && sorted[j] == sorted[i] {
            acc += (j + 1) as f64 / n as f64;
            j += 1;
        }
        xs.push(sorted[i]);
        ys.push(acc / (j - i) as f64);
        ws.push((j - i) as f64);
        i = j;
    }

    let fitted = pav_nondecreasing(&ys, &ws);

    let mut breakpoints = vec![(0.0, 0.0)];
    for (x, f) in xs.iter().zip(&fitted) {
        if *x > 0.0 && *x < 1.0 {
            let clamped = f.clamp(0.0, 1.0);
            // Keep the polyline non-decreasing after the (0,0) pin.
            let floor = breakpoints.last().unwrap().1;
            breakpoints.push((*x, clamped.max(floor)));
        }
    }
    breakpoints.push((1.0, 1.0));
    Ok(CalibrationMap { breakpoints })
}

/// Quantile grid used for recalibrated distributions: 0.01..0.99.
pub fn recalibration_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// Post-hoc recalibration: the calibrated quantile at level p is the raw
/// quantile at map^-1(p). Produces a 99-level quantile set; the mean is
/// carried over from the raw distribution when available.
pub fn recalibrate(
    dist: &PredictiveDistribution,
    map: &CalibrationMap,
) -> Result<PredictiveDistribution> {
    let mean = match dist {
        PredictiveDistribution::Gaussian(g) => Some(g.mu),
        PredictiveDistribution::Exponential(e) => Some(e.scale),
        PredictiveDistribution::Quantiles(q) => q.mean,
    };
    let mut points = Vec::with_capacity(99);
    let mut prev_value = f64::NEG_INFINITY;
    for p in recalibration_grid() {
        let raw_level = map.inverse(p).clamp(1e-9, 1.0 - 1e-9);
        let mut value = dist.quantile(raw_level)?;
        if value < prev_value {
            value = prev_value;
        }
        prev_value = value;
        points.push((p, value));
    }
    Ok(PredictiveDistribution::Quantiles(QuantileSet::new(
        points, mean,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::GaussianParams;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pit_parametric_hand_values() {
        let g = PredictiveDistribution::gaussian(7.0, 2.0).unwrap();
        assert_abs_diff_eq!(pit(&g, 7.0).unwrap(), 0.5, epsilon = 1e-12);
        let e = PredictiveDistribution::exponential(2.0).unwrap();
        assert_abs_diff_eq!(
            pit(&e, 2.0 * std::f64::consts::LN_2).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pit_quantile_set_interpolates() {
        let q = QuantileSet::new(vec![(0.1, 1.0), (0.9, 3.0)], None).unwrap();
        let d = PredictiveDistribution::Quantiles(q);
        assert_abs_diff_eq!(pit(&d, 2.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pit(&d, 0.0).unwrap(), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(pit(&d, 9.0).unwrap(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn curve_on_uniform_grid() {
        let pits: Vec<f64> = (0..10).map(|i| 0.05 + 0.1 * i as f64).collect();
        let curve = calibration_curve(&pits, &[0.5]).unwrap();
        assert_abs_diff_eq!(curve.empirical[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn curve_detects_underconfidence_spike() {
        let pits = vec![0.49; 20];
        let curve = calibration_curve(&pits, &[0.5]).unwrap();
        assert_eq!(curve.empirical[0], 1.0);
    }

    #[test]
    fn curve_of_calibrated_model_hugs_diagonal() {
        // PITs of a perfectly calibrated model are uniform.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pits: Vec<f64> = (0..100_000).map(|_| rng.gen::<f64>()).collect();
        let levels: Vec<f64> = (1..=19).map(|i| i as f64 * 0.05).collect();
        let curve = calibration_curve(&pits, &levels).unwrap();
        let max_gap = curve
            .levels
            .iter()
            .zip(&curve.empirical)
            .map(|(p, e)| (e - p).abs())
            .fold(0.0f64, f64::max);
        assert!(max_gap < 0.01, "max deviation {max_gap} >= 0.01");
    }

    #[test]
    fn calibration_error_hand_values() {
        let exact = CalibrationCurve {
            levels: vec![0.25, 0.5, 0.75],
            empirical: vec![0.25, 0.5, 0.75],
            n_eval: 4,
        };
        assert_eq!(calibration_error(&exact), 0.0);

        let off = CalibrationCurve {
            levels: vec![0.25, 0.5, 0.75],
            empirical: vec![0.35, 0.6, 0.85],
            n_eval: 20,
        };
        assert_abs_diff_eq!(calibration_error(&off), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn calibration_error_is_order_invariant() {
        let a = CalibrationCurve {
            levels: vec![0.2, 0.5, 0.8],
            empirical: vec![0.25, 0.45, 0.9],
            n_eval: 20,
        };
        let b = CalibrationCurve {
            levels: vec![0.8, 0.2, 0.5],
            empirical: vec![0.9, 0.25, 0.45],
            n_eval: 20,
        };
        assert_abs_diff_eq!(
            calibration_error(&a),
            calibration_error(&b),
            epsilon = 1e-15
        );
    }

    #[test]
    fn pav_hand_example() {
        let fitted = pav_nondecreasing(&[0.2, 0.1, 0.4], &[1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(fitted[0], 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(fitted[1], 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(fitted[2], 0.4, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn pav_output_is_always_nondecreasing(values in proptest::collection::vec(0.0..1.0f64, 1..40)) {
            let weights = vec![1.0; values.len()];
            let fitted = pav_nondecreasing(&values, &weights);
            for w in fitted.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }

        #[test]
        fn isotonic_map_is_monotone(pits in proptest::collection::vec(0.0..1.0f64, 1..60)) {
            let map = fit_isotonic(&pits).unwrap();
            for w in map.breakpoints.windows(2) {
                prop_assert!(w[1].0 >= w[0].0);
                prop_assert!(w[1].1 >= w[0].1 - 1e-12);
            }
            // Evaluations are monotone too.
            let mut prev = -1.0;
            for i in 0..=20 {
                let v = map.apply(i as f64 / 20.0);
                prop_assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }

    #[test]
    fn isotonic_on_uniform_pits_is_near_identity() {
        let pits: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let map = fit_isotonic(&pits).unwrap();
        let n = pits.len() as f64;
        for i in 1..=9 {
            let p = i as f64 / 10.0;
            let gap = (map.apply(p) - p).abs();
            assert!(gap <= 1.0 / n + 1e-9, "map({p}) off by {gap}");
        }
    }

    #[test]
    fn isotonic_training_error_never_worse_than_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..10 {
            let pits: Vec<f64> = (0..200).map(|_| rng.gen::<f64>().powf(1.7)).collect();
            let map = fit_isotonic(&pits).unwrap();
            let levels = default_levels();
            let raw = calibration_curve(&pits, &levels).unwrap();
            // Remeasure after mapping each PIT through the fitted map.
            let mapped: Vec<f64> = pits.iter().map(|&p| map.apply(p)).collect();
            let cal = calibration_curve(&mapped, &levels).unwrap();
            assert!(
                calibration_error(&cal) <= calibration_error(&raw) + 1e-9,
                "isotonic fit worsened its own training data"
            );
        }
    }

    #[test]
    fn identity_map_keeps_raw_quantiles() {
        let d = PredictiveDistribution::gaussian(5.0, 2.0).unwrap();
        let cal = recalibrate(&d, &CalibrationMap::identity()).unwrap();
        let PredictiveDistribution::Quantiles(q) = &cal else {
            panic!()
        };
        for &(p, v) in &q.points {
            assert_abs_diff_eq!(v, d.quantile(p).unwrap(), epsilon = 1e-6);
        }
        assert_eq!(q.mean, Some(5.0));
    }

    #[test]
    fn recalibration_narrows_overwide_gaussian() {
        // Data y ~ N(0,1) but the model predicts N(0,2): PITs concentrate
        // near 0.5, the isotonic map steepens through the middle, and the
        // calibrated 90% interval must come in narrower than the raw one.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let overwide = PredictiveDistribution::gaussian(0.0, 2.0).unwrap();
        let pits: Vec<f64> = (0..5000)
            .map(|_| {
                let y = crate::dist::std_normal_quantile(rng.gen_range(1e-12..1.0 - 1e-12));
                pit(&overwide, y).unwrap()
            })
            .collect();
        let map = fit_isotonic(&pits).unwrap();
        let cal = recalibrate(&overwide, &map).unwrap();

        let raw_width = overwide.quantile(0.95).unwrap() - overwide.quantile(0.05).unwrap();
        let cal_width = cal.quantile(0.95).unwrap() - cal.quantile(0.05).unwrap();
        assert!(
            cal_width < raw_width,
            "calibrated width {cal_width} not narrower than raw {raw_width}"
        );
        // And close to the true N(0,1) interval.
        let true_width = 2.0 * 1.6448536269514722;
        assert!((cal_width - true_width).abs() / true_width < 0.1);
    }

    #[test]
    fn recalibrate_preserves_quantile_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pits: Vec<f64> = (0..500).map(|_| rng.gen::<f64>().sqrt()).collect();
        let map = fit_isotonic(&pits).unwrap();
        let d = PredictiveDistribution::exponential(4.16).unwrap();
        let cal = recalibrate(&d, &map).unwrap();
        let PredictiveDistribution::Quantiles(q) = cal else {
            panic!()
        };
        for w in q.points.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn recalibrated_pits_on_own_split_do_not_degrade() {
        // Property of the isotonic fit measured on the data it was fit on.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = PredictiveDistribution::gaussian(1.0, 1.6).unwrap();
        let ys: Vec<f64> = (0..3000)
            .map(|_| 1.0 + crate::dist::std_normal_quantile(rng.gen_range(1e-12..1.0 - 1e-12)))
            .collect();
        let raw_pits: Vec<f64> = ys.iter().map(|&y| pit(&model, y).unwrap()).collect();
        let map = fit_isotonic(&raw_pits).unwrap();
        let cal = recalibrate(&model, &map).unwrap();
        let cal_pits: Vec<f64> = ys.iter().map(|&y| pit(&cal, y).unwrap()).collect();

        let levels = default_levels();
        let raw_err = calibration_error(&calibration_curve(&raw_pits, &levels).unwrap());
        let cal_err = calibration_error(&calibration_curve(&cal_pits, &levels).unwrap());
        assert!(
            cal_err <= raw_err + 0.01,
            "recalibration degraded: raw {raw_err} -> calibrated {cal_err}"
        );
    }

    #[test]
    fn map_inverse_is_generalized_inverse() {
        let map = CalibrationMap {
            breakpoints: vec![(0.0, 0.0), (0.3, 0.5), (0.7, 0.5), (1.0, 1.0)],
        };
        // The flat stretch at 0.5 inverts to its left edge.
        assert_abs_diff_eq!(map.inverse(0.5), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(map.inverse(0.25), 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(map.inverse(1.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(map.inverse(0.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_params_sanity() {
        assert!(GaussianParams::new(0.0, -1.0).is_err());
    }
}
