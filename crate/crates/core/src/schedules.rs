//! Per-band interpolation schedules, loss weights, the training time sampler
//! and the sampling-time warp.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default smoothing offset of the power schedules.
pub const DEFAULT_EPS_SMOOTH: f64 = 0.01;

fn check_unit_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} is outside [0, 1]")));
    }
    Ok(())
}

/// Smoothed power schedule
/// `g(t) = ((t + eps)^gamma - eps^gamma) / ((1 + eps)^gamma - eps^gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSchedule {
    gamma: f64,
    eps_smooth: f64,
}

impl PowerSchedule {
    pub fn new(gamma: f64, eps_smooth: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        if !(eps_smooth >= 0.0 && eps_smooth.is_finite()) {
            return Err(Error::Config(format!(
                "eps_smooth must be non-negative, got {eps_smooth}"
            )));
        }
        Ok(Self { gamma, eps_smooth })
    }

    pub fn linear() -> Self {
        Self {
            gamma: 1.0,
            eps_smooth: DEFAULT_EPS_SMOOTH,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eps_smooth(&self) -> f64 {
        self.eps_smooth
    }

    /// Returns `(g(t), g'(t))`.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        check_unit_time(t)?;
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> (f64, f64) {
        // the closed form reduces to g(t) = t; returning it directly keeps it exact
        if self.gamma == 1.0 {
            return (t, 1.0);
        }
        let (gamma, eps) = (self.gamma, self.eps_smooth);
        let base = eps.powf(gamma);
        let denom = (1.0 + eps).powf(gamma) - base;
        let g = ((t + eps).powf(gamma) - base) / denom;
        let gdot = gamma * (t + eps).powf(gamma - 1.0) / denom;
        (g, gdot)
    }
}

/// Values of both band schedules at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandCoefficients {
    pub g_low: f64,
    pub g_high: f64,
    pub gdot_low: f64,
    pub gdot_high: f64,
}

/// Low- and high-band schedules. In wavelet coordinates `G(t)` is the diagonal
/// operator `diag(g_low(t) I, g_high(t) I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroSchedule {
    pub low: PowerSchedule,
    pub high: PowerSchedule,
}

impl HeteroSchedule {
    pub fn new(gamma_low: f64, gamma_high: f64, eps_smooth: f64) -> Result<Self> {
        Ok(Self {
            low: PowerSchedule::new(gamma_low, eps_smooth)?,
            high: PowerSchedule::new(gamma_high, eps_smooth)?,
        })
    }

    /// The plain linear path `x_t = t x + (1 - t) noise` in both bands.
    pub fn homogeneous() -> Self {
        Self {
            low: PowerSchedule::linear(),
            high: PowerSchedule::linear(),
        }
    }

    pub fn eval(&self, t: f64) -> Result<BandCoefficients> {
        check_unit_time(t)?;
        let (g_low, gdot_low) = self.low.eval_unchecked(t);
        let (g_high, gdot_high) = self.high.eval_unchecked(t);
        Ok(BandCoefficients {
            g_low,
            g_high,
            gdot_low,
            gdot_high,
        })
    }

    /// Largest `|g'|` of either band over a uniform grid of `points` times
    /// including both endpoints. Each power schedule has a monotone derivative,
    /// so the endpoints already attain the maximum.
    pub fn derivative_bound(&self, points: usize) -> f64 {
        let points = points.max(2);
        (0..points)
            .map(|i| i as f64 / (points - 1) as f64)
            .map(|t| {
                let (_, dl) = self.low.eval_unchecked(t);
                let (_, dh) = self.high.eval_unchecked(t);
                dl.abs().max(dh.abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Cosine loss weights `lambda_l = 1 - omega cos(pi (1 - t))`,
/// `lambda_h = 1 + omega cos(pi (1 - t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqWeights {
    omega: f64,
}

impl FreqWeights {
    /// Fails unless `|omega| < 1`, which keeps both weights strictly positive.
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega.abs() < 1.0) {
            return Err(Error::Config(format!("omega must satisfy |omega| < 1, got {omega}")));
        }
        Ok(Self { omega })
    }

    pub fn uniform() -> Self {
        Self { omega: 0.0 }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Returns `(lambda_l(t), lambda_h(t))`.
    pub fn lambdas(&self, t: f64) -> (f64, f64) {
        let c = self.omega * (PI * (1.0 - t)).cos();
        (1.0 - c, 1.0 + c)
    }
}

/// Logit-normal time sampler: `t = sigmoid(mu + sigma z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSampler {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for TimeSampler {
    fn default() -> Self {
        Self { mu: -0.8, sigma: 0.8 }
    }
}

impl TimeSampler {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::Config(format!(
                "time sampler needs finite mu and sigma > 0, got ({mu}, {sigma})"
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// Deterministic map from a standard-normal draw to a time, clamped to the
    /// open unit interval.
    pub fn from_normal(&self, z: f64) -> f64 {
        let t = 1.0 / (1.0 + (-(self.mu + self.sigma * z)).exp());
        t.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.from_normal(rng.sample(StandardNormal))
    }
}

/// Rational time warp `t' = s t / (1 + (s - 1) t)`; `s = 1` is the identity and
/// larger `s` pushes the grid towards `t = 1`.
pub fn timeshift(t: f64, shift: f64) -> Result<f64> {
    if !(shift >= 1.0 && shift.is_finite()) {
        return Err(Error::Config(format!("timeshift must be >= 1, got {shift}")));
    }
    check_unit_time(t)?;
    Ok(shift * t / (1.0 + (shift - 1.0) * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_power_is_exact() {
        let s = PowerSchedule::new(1.0, 0.01).unwrap();
        assert_eq!(s.eval(0.3).unwrap(), (0.3, 1.0));
    }

    #[test]
    fn endpoints_are_exact() {
        for gamma in [0.5, 0.9, 0.95, 1.0, 1.05, 1.7, 3.0] {
            for eps in [0.0, 0.01, 0.3] {
                let s = PowerSchedule::new(gamma, eps).unwrap();
                assert_eq!(s.eval(0.0).unwrap().0, 0.0);
                assert_eq!(s.eval(1.0).unwrap().0, 1.0);
            }
        }
    }

    #[test]
    fn matches_extended_precision_values() {
        // reference values from 40-digit evaluation of the closed form
        let s = PowerSchedule::new(0.95, 0.01).unwrap();
        let (g, gdot) = s.eval(0.5).unwrap();
        assert!((g - 0.516_470_070_782_916_2).abs() < 1e-14);
        assert!((gdot - 0.985_575_389_144_908_9).abs() < 1e-13);
        let s = PowerSchedule::new(1.05, 0.01).unwrap();
        let (g, gdot) = s.eval(0.5).unwrap();
        assert!((g - 0.483_933_704_758_240_75).abs() < 1e-14);
        assert!((gdot - 1.012_646_166_591_055).abs() < 1e-13);
    }

    #[test]
    fn derivative_matches_central_differences() {
        let h = 1e-5;
        for gamma in [0.9, 0.95, 1.05, 1.1, 2.0] {
            let s = PowerSchedule::new(gamma, 0.01).unwrap();
            for i in 1..=99 {
                let t = i as f64 / 100.0;
                let fd = (s.eval(t + h).unwrap().0 - s.eval(t - h).unwrap().0) / (2.0 * h);
                let (_, gdot) = s.eval(t).unwrap();
                assert!(((fd - gdot) / gdot).abs() < 1e-6, "gamma {gamma} t {t}");
            }
        }
    }

    #[test]
    fn rejects_times_outside_unit_interval() {
        let s = PowerSchedule::linear();
        assert!(matches!(s.eval(-1e-9), Err(Error::Domain(_))));
        assert!(matches!(s.eval(1.0 + 1e-9), Err(Error::Domain(_))));
        assert!(PowerSchedule::new(0.0, 0.01).is_err());
        assert!(PowerSchedule::new(1.0, -0.1).is_err());
    }

    #[test]
    fn low_band_runs_ahead() {
        let s = HeteroSchedule::new(0.95, 1.05, 0.01).unwrap();
        for i in 1..10_000 {
            let c = s.eval(i as f64 / 10_000.0).unwrap();
            assert!(c.g_low > c.g_high);
        }
    }

    #[test]
    fn derivative_bound_is_attained_at_endpoint() {
        let s = HeteroSchedule::new(0.95, 1.05, 0.01).unwrap();
        let bound = s.derivative_bound(10_001);
        assert!((bound - 1.199_688_122_013_315_4).abs() < 1e-12);
    }

    #[test]
    fn cosine_weights() {
        let w = FreqWeights::new(0.7).unwrap();
        assert_eq!(w.lambdas(0.0), (1.7, 0.30000000000000004));
        let (l, h) = w.lambdas(1.0);
        assert!((l - 0.3).abs() < 1e-15 && (h - 1.7).abs() < 1e-15);
        let (l, h) = w.lambdas(0.5);
        assert!((l - 1.0).abs() < 1e-15 && (h - 1.0).abs() < 1e-15);
        assert!(matches!(FreqWeights::new(1.0), Err(Error::Config(_))));
        assert!(FreqWeights::new(-1.2).is_err());
    }

    #[test]
    fn weights_stay_positive_and_sum_to_two() {
        for omega in [-0.99, -0.7, -0.3, 0.0, 0.5, 0.7, 0.99] {
            let w = FreqWeights::new(omega).unwrap();
            for i in 0..=1000 {
                let (l, h) = w.lambdas(i as f64 / 1000.0);
                assert!(l > 0.0 && h > 0.0);
                assert!((l + h - 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn time_sampler_median_and_limits() {
        let ts = TimeSampler::default();
        let median = ts.from_normal(0.0);
        assert!((median - 1.0 / (1.0 + 0.8f64.exp())).abs() < 1e-15);
        assert!((median - 0.31).abs() < 0.01);
        let lo = ts.from_normal(-1e6);
        let hi = ts.from_normal(1e6);
        assert!(lo > 0.0 && lo < 1e-300);
        assert!(hi < 1.0 && hi > 1.0 - 1e-15);
    }

    #[test]
    fn time_sampler_is_seeded() {
        let ts = TimeSampler::default();
        let a: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..5).map(|_| ts.sample(&mut rng)).collect()
        };
        let b: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..5).map(|_| ts.sample(&mut rng)).collect()
        };
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| t > 0.0 && t < 1.0));
    }

    #[test]
    fn time_sampler_mean_regression() {
        // quadrature mean of logit-normal(-0.8, 0.8) is 0.331045; the
        // tolerance is about four standard errors at 10^6 draws
        let ts = TimeSampler::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let mean = (0..n).map(|_| ts.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.331_045).abs() < 6e-4, "mean {mean}");
    }

    #[test]
    fn timeshift_warp() {
        assert_eq!(timeshift(0.37, 1.0).unwrap(), 0.37);
        for s in [1.0, 2.0, 3.5] {
            assert_eq!(timeshift(0.0, s).unwrap(), 0.0);
            assert_eq!(timeshift(1.0, s).unwrap(), 1.0);
        }
        assert!((timeshift(0.5, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(timeshift(0.5, 0.9), Err(Error::Config(_))));
    }
}
