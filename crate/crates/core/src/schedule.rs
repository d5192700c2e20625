//! Discrete noise schedule and the closed-form coefficients of the forward
//! and reverse processes.
//!
//! Steps are indexed `t = 1..=T`. The cumulative product `ᾱ_t` is extended
//! with `ᾱ_0 = 1`, so the last reverse step collapses onto the predicted
//! clean point.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// The `β_t`, `α_t` and `ᾱ_t` sequences of a discrete diffusion process.
///
/// Immutable once built. All arithmetic is done in `f64`; a thousand-step
/// cumulative product in `f32` drifts visibly.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// What is needed to rebuild a schedule bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Coefficients of the Gaussian posterior `q(x_{t-1} | x_t, x_0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoeffs {
    pub mean_coef_x0: f64,
    pub mean_coef_xt: f64,
    pub var: f64,
}

/// Which fixed variance the ancestral reverse step uses: the forward `β_t`
/// (upper bound) or the posterior `β̃_t` (lower bound).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceChoice {
    Beta,
    PosteriorBeta,
}

impl NoiseSchedule {
    /// Linearly interpolated `β_t` from `beta_start` at `t = 1` to
    /// `beta_end` at `t = T`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("schedule needs at least one step".into()));
        }
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(beta_start) || !in_unit(beta_end) || beta_start > beta_end {
            return Err(Error::InvalidParameter(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(
            ScheduleParams {
                steps,
                beta_start,
                beta_end,
            },
            beta,
        )
    }

    pub fn from_params(params: ScheduleParams) -> Result<Self> {
        Self::linear(params.steps, params.beta_start, params.beta_end)
    }

    fn from_betas(params: ScheduleParams, beta: Vec<f64>) -> Result<Self> {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self {
            params,
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// Number of diffusion steps `T`.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    /// `ᾱ_1 ..= ᾱ_T` (without the `ᾱ_0 = 1` convention value).
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            Err(Error::StepOutOfRange { t, max: self.len() })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.beta[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha[t - 1])
    }

    /// `ᾱ_t` for `0 <= t <= T`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.len() => Ok(self.alpha_bar[t - 1]),
            t => Err(Error::StepOutOfRange { t, max: self.len() }),
        }
    }

    /// The drift coefficient `e(t) = √(1 − ᾱ_{t−1}) − √(1/α_t − ᾱ_{t−1})`
    /// that multiplies a guidance correction in one DDIM step.
    pub fn drift_coefficient(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(drift_coefficient_from(self.alpha_bar(t - 1)?, self.alpha[t - 1]))
    }

    /// Drift coefficient of a strided step `t → t_prev`. Equal to
    /// [`drift_coefficient`](Self::drift_coefficient) up to rounding when
    /// `t_prev = t − 1`.
    pub fn drift_coefficient_between(&self, t: usize, t_prev: usize) -> Result<f64> {
        self.check_pair(t, t_prev)?;
        let ab_t = self.alpha_bar(t)?;
        let ab_prev = self.alpha_bar(t_prev)?;
        Ok((1.0 - ab_prev).sqrt() - (ab_prev / ab_t - ab_prev).sqrt())
    }

    pub fn posterior_coeffs(&self, t: usize) -> Result<PosteriorCoeffs> {
        self.check_step(t)?;
        let beta = self.beta[t - 1];
        let alpha = self.alpha[t - 1];
        let ab_t = self.alpha_bar[t - 1];
        let ab_prev = self.alpha_bar(t - 1)?;
        Ok(PosteriorCoeffs {
            mean_coef_x0: ab_prev.sqrt() * beta / (1.0 - ab_t),
            mean_coef_xt: alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t),
            var: (1.0 - ab_prev) / (1.0 - ab_t) * beta,
        })
    }

    /// Reverse-process mean recovered from a noise prediction:
    /// `μ = (x_t − (1 − α_t)/√(1 − ᾱ_t) · ε) / √α_t`.
    pub fn mean_from_epsilon(&self, t: usize, x_t: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
        self.check_step(t)?;
        check_dim(x_t.len(), eps.len())?;
        let alpha = self.alpha[t - 1];
        let coef = (1.0 - alpha) / (1.0 - self.alpha_bar[t - 1]).sqrt();
        let scale = alpha.sqrt();
        Ok(x_t.iter().zip(eps).map(|(x, e)| (x - coef * e) / scale).collect())
    }

    /// One application of the forward kernel
    /// `x_t = √α_t · x_{t−1} + √β_t · noise`.
    pub fn forward_step(&self, t: usize, x_prev: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        self.check_step(t)?;
        check_dim(x_prev.len(), noise.len())?;
        let a = self.alpha[t - 1].sqrt();
        let b = self.beta[t - 1].sqrt();
        Ok(x_prev.iter().zip(noise).map(|(x, n)| a * x + b * n).collect())
    }

    /// A descending grid of `n` sampling times with uniform stride that
    /// starts at `T`. For `T = 1000, n = 50` this is `1000, 980, ..., 20`.
    pub fn sampling_grid(&self, n: usize) -> Result<Vec<usize>> {
        let big_t = self.len();
        if n == 0 || n > big_t {
            return Err(Error::InvalidParameter(format!(
                "sampling steps must be in [1, {big_t}], got {n}"
            )));
        }
        Ok((0..n).map(|k| big_t - k * big_t / n).collect())
    }

    pub(crate) fn check_pair(&self, t: usize, t_prev: usize) -> Result<()> {
        self.check_step(t)?;
        if t_prev >= t {
            return Err(Error::InvalidStepPair { t, t_prev });
        }
        Ok(())
    }
}

/// `e(t)` from raw values of `ᾱ_{t−1}` and `α_t`.
pub fn drift_coefficient_from(alpha_bar_prev: f64, alpha_t: f64) -> f64 {
    (1.0 - alpha_bar_prev).sqrt() - (1.0 / alpha_t - alpha_bar_prev).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        assert_eq!(s.betas(), &[0.1]);
        assert_eq!(s.alphas(), &[0.9]);
        assert_eq!(s.alpha_bars(), &[0.9]);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
    }

    #[test]
    fn default_first_and_last_alpha_bar() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.alpha_bar(1).unwrap(), 0.9999);
        // Exact value is checked against an extended-precision oracle in
        // tests/schedule.rs.
        let last = s.alpha_bar(1000).unwrap();
        assert!(last > 3e-5 && last < 5e-5, "{last}");
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t).unwrap() < s.alpha_bar(t - 1).unwrap());
        }
        assert!(s.alpha_bar(1000).unwrap() > 0.0);
        assert!(s.alpha_bar(1001).is_err());
    }

    #[test]
    fn drift_coefficient_examples() {
        assert_eq!(drift_coefficient_from(1.0, 1.0), 0.0);
        let e = drift_coefficient_from(0.9, 0.99);
        // Reference from a 40-digit evaluation of the same formula.
        assert!((e - (-0.015_586_956_533_277_527)).abs() < 1e-15, "{e}");
    }

    #[test]
    fn drift_coefficient_nonzero_everywhere() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        for t in 1..=1000 {
            assert!(s.drift_coefficient(t).unwrap().abs() > 1e-12);
        }
        assert!(s.drift_coefficient(0).is_err());
        assert!(s.drift_coefficient(1001).is_err());
    }

    #[test]
    fn strided_drift_matches_consecutive() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        for t in [1, 2, 500, 1000] {
            let a = s.drift_coefficient(t).unwrap();
            let b = s.drift_coefficient_between(t, t - 1).unwrap();
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn posterior_collapses_at_first_step() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let p = s.posterior_coeffs(1).unwrap();
        assert!((p.mean_coef_x0 - 1.0).abs() < 1e-12);
        assert_eq!(p.mean_coef_xt, 0.0);
        assert_eq!(p.var, 0.0);
        for t in 2..=1000 {
            assert!(s.posterior_coeffs(t).unwrap().var > 0.0);
        }
    }

    #[test]
    fn mean_from_epsilon_identity_without_noise() {
        let s = NoiseSchedule::linear(3, 0.1, 0.3).unwrap();
        let x = [0.5, -1.0];
        let mu = s.mean_from_epsilon(2, &x, &[0.0, 0.0]).unwrap();
        let a = s.alpha(2).unwrap().sqrt();
        assert_eq!(mu, vec![0.5 / a, -1.0 / a]);
        assert!(s.mean_from_epsilon(2, &x, &[0.0]).is_err());
    }

    #[test]
    fn grid_is_uniform_and_starts_at_t() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let g = s.sampling_grid(50).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 1000);
        assert_eq!(*g.last().unwrap(), 20);
        assert!(g.windows(2).all(|w| w[0] - w[1] == 20));
        assert_eq!(s.sampling_grid(1000).unwrap().last(), Some(&1));
        assert!(s.sampling_grid(0).is_err());
        assert!(s.sampling_grid(1001).is_err());
    }
}
