use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
}

/// Coefficients indexed by step `k = 0..=K`; index 0 is the clean end
/// (`alpha_bar[0] = 1`, `alpha[0] = 1`, `beta[0] = sigma[0] = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
}

const COSINE_S: f64 = 0.008;

pub fn build_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::validation("schedule needs at least one step"));
    }
    let f = |k: usize| {
        let t = (k as f64 / steps as f64 + COSINE_S) / (1.0 + COSINE_S);
        (t * FRAC_PI_2).cos().powi(2)
    };
    let f0 = f(0);
    let mut alpha_bar: Vec<f64> = (0..=steps).map(|k| f(k) / f0).collect();
    alpha_bar[0] = 1.0;
    let mut alpha = vec![1.0; steps + 1];
    let mut beta = vec![0.0; steps + 1];
    let mut sigma = vec![0.0; steps + 1];
    for k in 1..=steps {
        alpha[k] = alpha_bar[k] / alpha_bar[k - 1];
        beta[k] = 1.0 - alpha[k];
        sigma[k] = (beta[k] * (1.0 - alpha_bar[k - 1]) / (1.0 - alpha_bar[k])).sqrt();
    }
    Ok(NoiseSchedule {
        kind,
        steps,
        alpha,
        beta,
        alpha_bar,
        sigma,
    })
}

impl NoiseSchedule {
    fn check_step(&self, k: usize) -> Result<()> {
        if k < 1 || k > self.steps {
            return Err(Error::Domain(format!("step {k} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    /// `√ᾱ_k · a + √(1−ᾱ_k) · ε`, elementwise.
    pub fn forward_noise(&self, a: &[f64], k: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_step(k)?;
        if a.len() != eps.len() {
            return Err(Error::DimensionMismatch {
                what: "noise",
                expected: a.len(),
                actual: eps.len(),
            });
        }
        let (sa, sn) = self.noise_coefficients(k);
        Ok(a.iter().zip(eps).map(|(a, e)| sa * a + sn * e).collect())
    }

    /// `(√ᾱ_k, √(1−ᾱ_k))`
    pub fn noise_coefficients(&self, k: usize) -> (f64, f64) {
        let ab = self.alpha_bar[k];
        (ab.sqrt(), (1.0 - ab).sqrt())
    }

    /// Posterior mean coefficients on the clean estimate and the current sample.
    pub fn posterior_coefficients(&self, k: usize) -> (f64, f64) {
        let ab = self.alpha_bar[k];
        let ab_prev = self.alpha_bar[k - 1];
        let c0 = ab_prev.sqrt() * self.beta[k] / (1.0 - ab);
        let ck = self.alpha[k].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ck)
    }

    /// One reverse step: `c0·â₀ + c_k·a_k + σ_k·z`, with `z` ignored at `k = 1`.
    pub fn posterior_step(&self, k: usize, a_hat0: &[f64], a_k: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_step(k)?;
        if a_hat0.len() != a_k.len() || z.len() != a_k.len() {
            return Err(Error::DimensionMismatch {
                what: "posterior step",
                expected: a_k.len(),
                actual: if a_hat0.len() != a_k.len() { a_hat0.len() } else { z.len() },
            });
        }
        let (c0, ck) = self.posterior_coefficients(k);
        let s = if k == 1 { 0.0 } else { self.sigma[k] };
        Ok(a_hat0
            .iter()
            .zip(a_k)
            .zip(z)
            .map(|((x0, xk), z)| {
                let v = c0 * x0 + ck * xk;
                if s == 0.0 {
                    v
                } else {
                    v + s * z
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let s = build_schedule(100, ScheduleKind::Cosine).unwrap();
        assert_eq!(s.alpha_bar[0], 1.0);
        assert!(s.alpha_bar[100] < 0.01);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(build_schedule(0, ScheduleKind::Cosine).is_err());
    }

    #[test]
    fn first_step_returns_clean_estimate() {
        let s = build_schedule(50, ScheduleKind::Cosine).unwrap();
        let out = s.posterior_step(1, &[0.3, -0.7], &[5.0, 9.0], &[1.0, 1.0]).unwrap();
        assert_eq!(out, vec![0.3, -0.7]);
        assert!(s.posterior_step(0, &[0.0], &[0.0], &[0.0]).is_err());
        assert!(s.posterior_step(51, &[0.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn zero_noise_scales_clean_sample() {
        let s = build_schedule(10, ScheduleKind::Cosine).unwrap();
        let out = s.forward_noise(&[2.0], 4, &[0.0]).unwrap();
        assert_eq!(out[0], 2.0 * s.alpha_bar[4].sqrt());
        assert!(s.forward_noise(&[2.0], 11, &[0.0]).is_err());
    }
}
