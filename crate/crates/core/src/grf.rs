//! Gaussian random fields on periodic 1-D domains via truncated
//! Karhunen–Loève (Fourier) expansions.
//!
//! The covariance `scale * (-Δ + shift)^(-power)` is diagonal in the Fourier
//! basis, so each mode is an independent Gaussian with variance
//! `scale * (λ_k + shift)^(-power)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrfDomain {
    /// `x ∈ [0, 1)`, eigenvalues `(2πk)²`.
    UnitIntervalPeriodic,
    /// `θ ∈ [0, 2π)`, eigenvalues `k²`.
    UnitCircle,
}

impl GrfDomain {
    pub fn eigenvalue(self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            GrfDomain::UnitIntervalPeriodic => (2.0 * PI * k).powi(2),
            GrfDomain::UnitCircle => k * k,
        }
    }

    /// Angular frequency of mode `k` in the domain coordinate.
    fn frequency(self, k: usize) -> f64 {
        match self {
            GrfDomain::UnitIntervalPeriodic => 2.0 * PI * k as f64,
            GrfDomain::UnitCircle => k as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfSpec {
    pub scale: f64,
    pub shift: f64,
    pub power: i32,
    pub n_modes: usize,
    pub domain: GrfDomain,
    #[serde(default = "yes")]
    pub include_constant: bool,
}

fn yes() -> bool {
    true
}

impl GrfSpec {
    /// `1000 (-Δ + 9)^-3` on the periodic unit interval.
    pub fn burgers() -> Self {
        Self {
            scale: 1000.0,
            shift: 9.0,
            power: 3,
            n_modes: 32,
            domain: GrfDomain::UnitIntervalPeriodic,
            include_constant: true,
        }
    }

    /// `10^{3/2} (-Δ + 100)^-3` on the unit circle.
    pub fn laplace() -> Self {
        Self {
            scale: 10f64.powf(1.5),
            shift: 100.0,
            power: 3,
            n_modes: 16,
            domain: GrfDomain::UnitCircle,
            include_constant: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.shift > 0.0) || self.n_modes == 0 {
            return Err(Error::Config(format!(
                "GRF needs scale > 0, shift > 0, n_modes >= 1 (got {}, {}, {})",
                self.scale, self.shift, self.n_modes
            )));
        }
        Ok(())
    }

    /// Variance of each coefficient of mode `k` (mode 0 is the constant).
    pub fn mode_variance(&self, k: usize) -> f64 {
        if k == 0 && !self.include_constant {
            return 0.0;
        }
        self.scale * (self.domain.eigenvalue(k) + self.shift).powi(-self.power)
    }
}

/// Truncated Fourier series `a_0 + Σ a_k cos(ω_k x) + b_k sin(ω_k x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrfSample {
    /// `K + 1` entries, index 0 is the constant mode.
    pub cos: Vec<f64>,
    /// `K` entries for modes `1..=K`.
    pub sin: Vec<f64>,
    pub domain: GrfDomain,
}

impl GrfSample {
    pub fn zeros(n_modes: usize, domain: GrfDomain) -> Self {
        Self {
            cos: vec![0.0; n_modes + 1],
            sin: vec![0.0; n_modes],
            domain,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.sin.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cos.len() != self.sin.len() + 1 {
            return Err(Error::Task(format!(
                "GRF sample needs len(cos) = len(sin) + 1, got {} and {}",
                self.cos.len(),
                self.sin.len()
            )));
        }
        if self.cos.iter().chain(&self.sin).any(|c| !c.is_finite()) {
            return Err(Error::Task("GRF sample has non-finite coefficients".into()));
        }
        Ok(())
    }

    pub fn evaluate_at(&self, x: f64) -> f64 {
        let mut acc = self.cos[0];
        for k in 1..=self.n_modes() {
            let (s, c) = (self.domain.frequency(k) * x).sin_cos();
            acc += self.cos[k] * c + self.sin[k - 1] * s;
        }
        acc
    }
}

pub fn sample_grf<R: Rng + ?Sized>(spec: &GrfSpec, rng: &mut R) -> Result<GrfSample> {
    spec.validate()?;
    let mut out = GrfSample::zeros(spec.n_modes, spec.domain);
    out.cos[0] = spec.mode_variance(0).sqrt() * rng.sample::<f64, _>(StandardNormal);
    for k in 1..=spec.n_modes {
        let sd = spec.mode_variance(k).sqrt();
        out.cos[k] = sd * rng.sample::<f64, _>(StandardNormal);
        out.sin[k - 1] = sd * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(out)
}

pub fn evaluate_grf(sample: &GrfSample, points: &[f64]) -> Vec<f64> {
    points.iter().map(|&x| sample.evaluate_at(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn burgers_mode_variances() {
        let spec = GrfSpec::burgers();
        assert!((spec.mode_variance(0) - 1000.0 / 729.0).abs() < 1e-12);
        assert!((spec.mode_variance(0) - 1.3717).abs() < 1e-4);
        let v1 = spec.mode_variance(1);
        let expect = 1000.0 / ((2.0 * PI).powi(2) + 9.0).powi(3);
        assert!((v1 - expect).abs() < 1e-15);
        assert!((v1 - 8.78e-3).abs() < 1e-5);
    }

    #[test]
    fn zero_sample_is_zero() {
        let s = GrfSample::zeros(8, GrfDomain::UnitIntervalPeriodic);
        assert!(evaluate_grf(&s, &[0.0, 0.3, 0.9]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cosine_mode() {
        let s = GrfSample {
            cos: vec![0.0, 1.0],
            sin: vec![0.0],
            domain: GrfDomain::UnitIntervalPeriodic,
        };
        assert_eq!(s.evaluate_at(0.0), 1.0);
        assert!((s.evaluate_at(0.25)).abs() < 1e-15);
        assert!((s.evaluate_at(0.3) - (2.0 * PI * 0.3).cos()).abs() < 1e-15);
    }

    #[test]
    fn periodic_endpoints_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_grf(&GrfSpec::burgers(), &mut rng).unwrap();
        assert!((s.evaluate_at(0.0) - s.evaluate_at(1.0)).abs() < 1e-12);
        let c = sample_grf(&GrfSpec::laplace(), &mut rng).unwrap();
        assert!((c.evaluate_at(0.0) - c.evaluate_at(2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = GrfSpec::burgers();
        spec.shift = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_grf(&spec, &mut rng).is_err());
    }

    #[test]
    fn constant_mode_switch() {
        let mut spec = GrfSpec::burgers();
        spec.include_constant = false;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(sample_grf(&spec, &mut rng).unwrap().cos[0], 0.0);
    }

    #[test]
    fn parseval_on_fine_grid() {
        let mut spec = GrfSpec::burgers();
        spec.n_modes = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = sample_grf(&spec, &mut rng).unwrap();
        let grid: Vec<f64> = (0..1024).map(|j| j as f64 / 1024.0).collect();
        let vals = evaluate_grf(&s, &grid);
        let ms = vals.iter().map(|v| v * v).sum::<f64>() / 1024.0;
        let energy = s.cos[0].powi(2)
            + 0.5 * (s.cos[1..].iter().map(|c| c * c).sum::<f64>() + s.sin.iter().map(|c| c * c).sum::<f64>());
        assert!((ms / energy - 1.0).abs() < 0.01, "{ms} vs {energy}");
    }

    #[test]
    fn sample_mean_is_near_zero() {
        let spec = GrfSpec::burgers();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pts = [0.0, 0.17, 0.5, 0.83];
        let n = 2000;
        let mut sums = [0.0; 4];
        for _ in 0..n {
            let s = sample_grf(&spec, &mut rng).unwrap();
            for (acc, v) in sums.iter_mut().zip(evaluate_grf(&s, &pts)) {
                *acc += v;
            }
        }
        // pointwise variance is the sum of all mode variances (stationary field)
        let var: f64 = spec.mode_variance(0) + (1..=spec.n_modes).map(|k| spec.mode_variance(k)).sum::<f64>();
        for s in sums {
            let mean = s / n as f64;
            assert!(mean.abs() <= 3.0 * var.sqrt() / (n as f64).sqrt(), "mean {mean}");
        }
    }
}
