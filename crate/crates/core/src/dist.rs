//! Parametric output distributions (Gaussian, Exponential) and quantile sets.
//!
//! Internal coordinates are unconstrained: `(mu, ln sigma)` for the Gaussian
//! and `ln scale` for the Exponential. In these coordinates the Exponential
//! Fisher information is exactly 1, so its natural gradient equals the
//! ordinary gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on any Gaussian sigma produced from raw model output.
pub const SIGMA_FLOOR: f64 = 1e-4;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Gaussian over minutes, `sigma > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::Numerical(format!(
                "invalid Gaussian parameters mu={mu} sigma={sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// Build from internal coordinates `(mu, ln sigma)`, flooring sigma.
    pub fn from_internal(theta: &[f64]) -> Self {
        Self {
            mu: theta[0],
            sigma: theta[1].exp().max(SIGMA_FLOOR),
        }
    }

    pub fn internal(&self) -> [f64; 2] {
        [self.mu, self.sigma.ln()]
    }
}

/// Exponential over minutes, parameterized by its mean (`scale > 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialParams {
    pub scale: f64,
}

impl ExponentialParams {
    pub fn new(scale: f64) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::Numerical(format!(
                "invalid Exponential scale {scale}"
            )));
        }
        Ok(Self { scale })
    }

    /// Build from the internal coordinate `ln scale`.
    pub fn from_internal(theta: &[f64]) -> Self {
        Self {
            scale: theta[0].exp(),
        }
    }

    pub fn internal(&self) -> [f64; 1] {
        [self.scale.ln()]
    }
}

/// Set of (level, value) quantile pairs with an optional mean.
///
/// Levels are strictly increasing in (0,1); values are non-decreasing
/// (monotone repair happens before construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSet {
    pub points: Vec<(f64, f64)>,
    pub mean: Option<f64>,
}

impl QuantileSet {
    pub fn new(points: Vec<(f64, f64)>, mean: Option<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Data("quantile set needs at least one point".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Data(format!(
                    "quantile levels must be strictly increasing, got {} then {}",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::Data(format!(
                    "quantile values must be non-decreasing, got {} then {}",
                    w[0].1, w[1].1
                )));
            }
        }
        for &(p, v) in &points {
            if !(p > 0.0 && p < 1.0) || !v.is_finite() {
                return Err(Error::Data(format!("invalid quantile point ({p}, {v})")));
            }
        }
        Ok(Self { points, mean })
    }

    /// Value at level `p`: linear interpolation, clamped at the extreme
    /// stored levels.
    pub fn value_at(&self, p: f64) -> f64 {
        let pts = &self.points;
        if p <= pts[0].0 {
            return pts[0].1;
        }
        if p >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let idx = pts.partition_point(|&(level, _)| level < p);
        let (p0, v0) = pts[idx - 1];
        let (p1, v1) = pts[idx];
        v0 + (v1 - v0) * (p - p0) / (p1 - p0)
    }

    /// Level at value `y`: piecewise-linear inverse of `value_at`, clamped
    /// to the lowest and highest stored levels.
    pub fn level_at(&self, y: f64) -> f64 {
        let pts = &self.points;
        if y <= pts[0].1 {
            return pts[0].0;
        }
        if y >= pts[pts.len() - 1].1 {
            return pts[pts.len() - 1].0;
        }
        let idx = pts.partition_point(|&(_, v)| v < y);
        let (p0, v0) = pts[idx - 1];
        let (p1, v1) = pts[idx];
        debug_assert!(v1 > v0);
        p0 + (p1 - p0) * (y - v0) / (v1 - v0)
    }
}

/// Tagged union over the predictive distributions a model can emit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredictiveDistribution {
    Gaussian(GaussianParams),
    Exponential(ExponentialParams),
    Quantiles(QuantileSet),
}

impl PredictiveDistribution {
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        Ok(Self::Gaussian(GaussianParams::new(mu, sigma)?))
    }

    pub fn exponential(scale: f64) -> Result<Self> {
        Ok(Self::Exponential(ExponentialParams::new(scale)?))
    }

    /// Negative log-likelihood at `y` and its gradient over the internal
    /// coordinates. Parametric distributions only.
    pub fn nll_and_grad(&self, y: f64) -> Result<(f64, Vec<f64>)> {
        if !y.is_finite() {
            return Err(Error::Numerical(format!("non-finite observation {y}")));
        }
        match self {
            Self::Gaussian(g) => {
                let theta = g.internal();
                Ok((
                    Family::Gaussian.nll(&theta, y),
                    Family::Gaussian.grad(&theta, y)?.to_vec(),
                ))
            }
            Self::Exponential(e) => {
                let theta = e.internal();
                Ok((
                    Family::Exponential.nll(&theta, y),
                    Family::Exponential.grad(&theta, y)?[..1].to_vec(),
                ))
            }
            Self::Quantiles(_) => Err(Error::Usage(
                "nll_and_grad is only defined for parametric distributions".into(),
            )),
        }
    }

    /// Fisher information over the internal coordinates (row-major, side
    /// equal to the parameter count) and the natural gradient of the NLL.
    pub fn fisher_and_natural_grad(&self, y: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Self::Gaussian(g) => {
                let theta = g.internal();
                let fisher = vec![1.0 / (g.sigma * g.sigma), 0.0, 0.0, 2.0];
                let nat = Family::Gaussian.natural_grad(&theta, y)?;
                Ok((fisher, nat.to_vec()))
            }
            Self::Exponential(e) => {
                let theta = e.internal();
                let nat = Family::Exponential.natural_grad(&theta, y)?;
                Ok((vec![1.0], nat[..1].to_vec()))
            }
            Self::Quantiles(_) => Err(Error::Usage(
                "Fisher information is only defined for parametric distributions".into(),
            )),
        }
    }

    /// CDF at `y`. Parametric distributions only; see
    /// [`crate::calibration::pit`] for the quantile-set counterpart.
    pub fn cdf(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::Numerical(format!("non-finite observation {y}")));
        }
        match self {
            Self::Gaussian(g) => Ok(std_normal_cdf((y - g.mu) / g.sigma)),
            Self::Exponential(e) => {
                if y < 0.0 {
                    Ok(0.0)
                } else {
                    Ok(-(-y / e.scale).exp_m1())
                }
            }
            Self::Quantiles(_) => Err(Error::Usage(
                "cdf is only defined for parametric distributions".into(),
            )),
        }
    }

    /// Quantile at level `p` in (0,1).
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Usage(format!("quantile level {p} outside (0,1)")));
        }
        match self {
            Self::Gaussian(g) => Ok(g.mu + g.sigma * std_normal_quantile(p)),
            Self::Exponential(e) => Ok(-e.scale * (1.0 - p).ln()),
            Self::Quantiles(q) => Ok(q.value_at(p)),
        }
    }

    /// `(mean, median)` in minutes.
    pub fn summary(&self) -> Result<(f64, f64)> {
        match self {
            Self::Gaussian(g) => Ok((g.mu, g.mu)),
            Self::Exponential(e) => Ok((e.scale, e.scale * std::f64::consts::LN_2)),
            Self::Quantiles(q) => {
                let brackets_median = q.points.first().map(|p| p.0 <= 0.5).unwrap_or(false)
                    && q.points.last().map(|p| p.0 >= 0.5).unwrap_or(false);
                if q.mean.is_none() && !brackets_median {
                    return Err(Error::Data(
                        "quantile set has no mean and does not bracket level 0.5".into(),
                    ));
                }
                let median = q.value_at(0.5);
                Ok((q.mean.unwrap_or(median), median))
            }
        }
    }
}

/// Output family for natural-gradient boosting; operates directly on the
/// internal coordinate vector so boosting never leaves log-space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Gaussian,
    Exponential,
}

impl Family {
    pub fn param_dim(self) -> usize {
        match self {
            Family::Gaussian => 2,
            Family::Exponential => 1,
        }
    }

    /// Predictive distribution at internal coordinates `theta` (sigma floored).
    pub fn distribution(self, theta: &[f64]) -> PredictiveDistribution {
        match self {
            Family::Gaussian => {
                PredictiveDistribution::Gaussian(GaussianParams::from_internal(theta))
            }
            Family::Exponential => {
                PredictiveDistribution::Exponential(ExponentialParams::from_internal(theta))
            }
        }
    }

    pub fn nll(self, theta: &[f64], y: f64) -> f64 {
        match self {
            Family::Gaussian => {
                let (mu, sigma) = (theta[0], theta[1].exp());
                let z = (y - mu) / sigma;
                HALF_LN_2PI + theta[1] + 0.5 * z * z
            }
            Family::Exponential => theta[0] + y * (-theta[0]).exp(),
        }
    }

    /// NLL gradient over internal coordinates; second slot unused for the
    /// Exponential family.
    pub fn grad(self, theta: &[f64], y: f64) -> Result<[f64; 2]> {
        self.check_obs(y)?;
        Ok(match self {
            Family::Gaussian => {
                let (mu, sigma) = (theta[0], theta[1].exp());
                let z = (y - mu) / sigma;
                [-z / sigma, 1.0 - z * z]
            }
            Family::Exponential => [1.0 - y * (-theta[0]).exp(), 0.0],
        })
    }

    /// Fisher-preconditioned gradient. Gaussian Fisher is diag(1/sigma^2, 2);
    /// Exponential Fisher is the identity in log-scale coordinates.
    pub fn natural_grad(self, theta: &[f64], y: f64) -> Result<[f64; 2]> {
        let g = self.grad(theta, y)?;
        Ok(match self {
            Family::Gaussian => {
                let sigma = theta[1].exp();
                [g[0] * sigma * sigma, g[1] / 2.0]
            }
            Family::Exponential => g,
        })
    }

    fn check_obs(self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::Numerical(format!("non-finite observation {y}")));
        }
        if self == Family::Exponential && y < 0.0 {
            return Err(Error::Numerical(format!(
                "negative observation {y} for Exponential family"
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "exponential" | "exp" => Ok(Family::Exponential),
            other => Err(Error::Usage(format!("unknown family '{other}'"))),
        }
    }
}

/// Standard normal CDF via the complementary error function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Newton step against the erfc-based CDF, accurate to well below 1e-8.
pub fn std_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0,1)");

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // One Newton polish step.
    let err = std_normal_cdf(x) - p;
    x - err / std_normal_pdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_nll_and_grad_hand_values() {
        let d = PredictiveDistribution::gaussian(0.0, 1.0).unwrap();
        let (nll, grad) = d.nll_and_grad(0.0).unwrap();
        assert_abs_diff_eq!(nll, 0.9189385332046727, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[1], 1.0, epsilon = 1e-12);

        let (nll, grad) = d.nll_and_grad(1.0).unwrap();
        assert_abs_diff_eq!(nll, 1.4189385332046727, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn exponential_grad_vanishes_at_mle() {
        for s in [0.3, 1.0, 4.16, 20.0] {
            let d = PredictiveDistribution::exponential(s).unwrap();
            let (_, grad) = d.nll_and_grad(s).unwrap();
            assert_abs_diff_eq!(grad[0], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gaussian_natural_gradient_hand_value() {
        let d = PredictiveDistribution::gaussian(0.0, 1.0).unwrap();
        let (_, grad) = d.nll_and_grad(2.0).unwrap();
        assert_abs_diff_eq!(grad[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[1], -3.0, epsilon = 1e-12);
        let (fisher, nat) = d.fisher_and_natural_grad(2.0).unwrap();
        assert_eq!(fisher, vec![1.0, 0.0, 0.0, 2.0]);
        assert_abs_diff_eq!(nat[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nat[1], -1.5, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_fisher_scales_with_sigma() {
        for sigma in [0.5, 2.0, 10.0] {
            let d = PredictiveDistribution::gaussian(0.0, sigma).unwrap();
            let (fisher, _) = d.fisher_and_natural_grad(1.0).unwrap();
            assert_abs_diff_eq!(fisher[0] * sigma * sigma, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(fisher[3], 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn exponential_natural_equals_ordinary() {
        let d = PredictiveDistribution::exponential(3.0).unwrap();
        for y in [0.0, 0.5, 3.0, 11.0] {
            let (_, grad) = d.nll_and_grad(y).unwrap();
            let (fisher, nat) = d.fisher_and_natural_grad(y).unwrap();
            assert_eq!(fisher, vec![1.0]);
            assert_eq!(grad, nat);
        }
    }

    #[test]
    fn cdf_hand_values() {
        let g = PredictiveDistribution::gaussian(5.0, 2.5).unwrap();
        assert_abs_diff_eq!(g.cdf(5.0).unwrap(), 0.5, epsilon = 1e-12);
        let std = PredictiveDistribution::gaussian(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(std.cdf(1.959964).unwrap(), 0.975, epsilon = 1e-6);

        let e = PredictiveDistribution::exponential(4.0).unwrap();
        assert_abs_diff_eq!(
            e.cdf(4.0 * std::f64::consts::LN_2).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_eq!(e.cdf(-1.0).unwrap(), 0.0);
    }

    #[test]
    fn quantile_hand_values() {
        let e = PredictiveDistribution::exponential(4.16).unwrap();
        // -4.16 * ln(0.01)
        assert_abs_diff_eq!(e.quantile(0.99).unwrap(), 19.157508, epsilon = 1e-5);

        let g = PredictiveDistribution::gaussian(5.0, 2.0).unwrap();
        assert_abs_diff_eq!(g.quantile(0.5).unwrap(), 5.0, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_quantile_cdf_roundtrip() {
        let g = PredictiveDistribution::gaussian(0.0, 1.0).unwrap();
        for y in [-2.0, 0.0, 3.0] {
            let p = g.cdf(y).unwrap();
            assert_abs_diff_eq!(g.quantile(p).unwrap(), y, epsilon = 1e-7);
        }
    }

    #[test]
    fn cdf_of_quantile_is_identity() {
        let dists = [
            PredictiveDistribution::gaussian(3.0, 0.7).unwrap(),
            PredictiveDistribution::exponential(4.16).unwrap(),
        ];
        for d in &dists {
            for i in 1..200 {
                let p = i as f64 / 200.0;
                let q = d.quantile(p).unwrap();
                assert_abs_diff_eq!(d.cdf(q).unwrap(), p, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn summaries() {
        let g = PredictiveDistribution::gaussian(3.0, 1.0).unwrap();
        assert_eq!(g.summary().unwrap(), (3.0, 3.0));

        let e = PredictiveDistribution::exponential(4.16).unwrap();
        let (mean, median) = e.summary().unwrap();
        assert_abs_diff_eq!(mean, 4.16, epsilon = 1e-12);
        assert_abs_diff_eq!(median, 2.8834923, epsilon = 1e-6);

        let q = QuantileSet::new(vec![(0.05, 1.0), (0.5, 2.0), (0.95, 9.0)], Some(3.1)).unwrap();
        let (mean, median) = PredictiveDistribution::Quantiles(q).summary().unwrap();
        assert_eq!((mean, median), (3.1, 2.0));
    }

    #[test]
    fn quantile_set_without_mean_or_median_bracketing_errors() {
        let q = QuantileSet::new(vec![(0.6, 1.0), (0.9, 3.0)], None).unwrap();
        assert!(PredictiveDistribution::Quantiles(q).summary().is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for _ in 0..100 {
            // Gaussian
            let theta = [rng.gen_range(-3.0..3.0), rng.gen_range(-1.5..1.5)];
            let y = rng.gen_range(-5.0..5.0);
            let grad = Family::Gaussian.grad(&theta, y).unwrap();
            for k in 0..2 {
                let mut up = theta;
                let mut dn = theta;
                up[k] += h;
                dn[k] -= h;
                let fd = (Family::Gaussian.nll(&up, y) - Family::Gaussian.nll(&dn, y)) / (2.0 * h);
                assert_relative_eq!(grad[k], fd, epsilon = 1e-5, max_relative = 1e-5);
            }

            // Exponential
            let theta = [rng.gen_range(-2.0..3.0)];
            let y = rng.gen_range(0.0..10.0);
            let grad = Family::Exponential.grad(&theta, y).unwrap();
            let up = [theta[0] + h];
            let dn = [theta[0] - h];
            let fd = (Family::Exponential.nll(&up, y) - Family::Exponential.nll(&dn, y)) / (2.0 * h);
            assert_relative_eq!(grad[0], fd, epsilon = 1e-5, max_relative = 1e-5);
        }
    }

    #[test]
    fn empirical_fisher_matches_closed_form() {
        // Monte-Carlo outer product of score vectors vs the analytic Fisher,
        // within 5% per entry (scaled by sqrt(F_ii * F_jj) for off-diagonals).
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;

        let (mu, sigma) = (1.3_f64, 0.8_f64);
        let theta = [mu, sigma.ln()];
        let mut acc = [0.0f64; 4];
        for _ in 0..n {
            let z = std_normal_quantile(rng.gen_range(1e-12..1.0_f64 - 1e-12));
            let y = mu + sigma * z;
            let g = Family::Gaussian.grad(&theta, y).unwrap();
            acc[0] += g[0] * g[0];
            acc[1] += g[0] * g[1];
            acc[2] += g[1] * g[0];
            acc[3] += g[1] * g[1];
        }
        let emp: Vec<f64> = acc.iter().map(|a| a / n as f64).collect();
        let exact = [1.0 / (sigma * sigma), 0.0, 0.0, 2.0];
        let scale = [
            exact[0],
            (exact[0] * exact[3]).sqrt(),
            (exact[0] * exact[3]).sqrt(),
            exact[3],
        ];
        for i in 0..4 {
            assert!(
                (emp[i] - exact[i]).abs() <= 0.05 * scale[i],
                "Gaussian Fisher entry {i}: empirical {} vs exact {}",
                emp[i],
                exact[i]
            );
        }

        let s = 4.16_f64;
        let theta = [s.ln()];
        let mut acc = 0.0;
        for _ in 0..n {
            let y = -s * (1.0 - rng.gen::<f64>()).ln();
            let g = Family::Exponential.grad(&theta, y).unwrap();
            acc += g[0] * g[0];
        }
        let emp = acc / n as f64;
        assert!(
            (emp - 1.0).abs() <= 0.05,
            "Exponential Fisher: empirical {emp} vs exact 1"
        );
    }

    #[test]
    fn cdf_monotone_and_quantile_monotone() {
        let dists = [
            PredictiveDistribution::gaussian(1.0, 2.0).unwrap(),
            PredictiveDistribution::exponential(3.0).unwrap(),
        ];
        for d in &dists {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..100 {
                let y = -10.0 + 0.3 * i as f64;
                let c = d.cdf(y).unwrap();
                assert!(c >= prev - 1e-15);
                prev = c;
            }
            let mut prev = f64::NEG_INFINITY;
            for i in 1..100 {
                let q = d.quantile(i as f64 / 100.0).unwrap();
                assert!(q >= prev);
                prev = q;
            }
        }
    }

    #[test]
    fn quantile_set_interpolation_clamps() {
        let q = QuantileSet::new(vec![(0.1, 1.0), (0.9, 3.0)], None).unwrap();
        let d = PredictiveDistribution::Quantiles(q);
        assert_abs_diff_eq!(d.quantile(0.5).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.quantile(0.05).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.quantile(0.99).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sigma_floor_applied_from_internal() {
        let g = GaussianParams::from_internal(&[0.0, -100.0]);
        assert_eq!(g.sigma, SIGMA_FLOOR);
    }

    #[test]
    fn quantile_level_errors() {
        let d = PredictiveDistribution::exponential(1.0).unwrap();
        assert!(d.quantile(0.0).is_err());
        assert!(d.quantile(1.0).is_err());
    }

    #[test]
    fn exponential_rejects_negative_observation() {
        let d = PredictiveDistribution::exponential(1.0).unwrap();
        assert!(d.nll_and_grad(-0.5).is_err());
    }
}
