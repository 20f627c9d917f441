//! Stochastic-volatility model for daily returns.
//!
//! ```text
//! y_t     = exp(h_t / 2) eps_t
//! h_{t+1} = mu + phi (h_t - mu) + sigma_eta eta_t,   h_1 ~ N(mu, sigma_eta^2 / (1 - phi^2))
//! ```
//!
//! Parameters are estimated with the auxiliary mixture Gibbs sampler
//! ([`estimate_sv`]); filtered log-volatility comes from an auxiliary particle
//! filter ([`filter_volatility`]); daily volatility is rolled up to months by
//! [`aggregate_monthly`].

mod aggregate;
pub mod io;
pub mod mixture;
mod particle;
mod sampler;

pub use aggregate::{aggregate_monthly, aggregate_sigma_monthly};
pub use particle::{filter_volatility, ParticleFilterOutput};
pub(crate) use sampler::quantile_sorted;
pub use sampler::{
    effective_sample_size, estimate_sv, linearize, SvConfig, SvDiagnostics, SvPosterior, SvPriors,
    VolatilitySource,
};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Parameters of the log-volatility AR(1). The observation scale is fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    pub mu: f64,
    pub phi: f64,
    pub sigma_eta: f64,
}

impl SvParams {
    pub fn new(mu: f64, phi: f64, sigma_eta: f64) -> Result<Self> {
        let p = Self { mu, phi, sigma_eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::InvalidParams(format!("mu = {} is not finite", self.mu)));
        }
        if !(self.phi.abs() < 1.0) {
            return Err(Error::InvalidParams(format!(
                "|phi| = {} must be < 1",
                self.phi.abs()
            )));
        }
        if !(self.sigma_eta > 0.0 && self.sigma_eta.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "sigma_eta = {} must be > 0",
                self.sigma_eta
            )));
        }
        Ok(())
    }

    /// Stationary variance of h.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma_eta * self.sigma_eta / (1.0 - self.phi * self.phi)
    }
}

/// Subtract the sample mean.
pub fn mean_correct(log_returns: &[f64]) -> Result<Vec<f64>> {
    if log_returns.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 returns, got {}",
            log_returns.len()
        )));
    }
    if log_returns.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite return".into()));
    }
    let mean = log_returns.iter().sum::<f64>() / log_returns.len() as f64;
    Ok(log_returns.iter().map(|v| v - mean).collect())
}

/// `scale * ln(p_t / p_{t-1})`; output is one shorter than the input.
pub fn prices_to_log_returns(prices: &[f64], scale: f64) -> Result<Vec<f64>> {
    if prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::InvalidInput("prices must be positive and finite".into()));
    }
    Ok(prices
        .windows(2)
        .map(|w| scale * (w[1] / w[0]).ln())
        .collect())
}

/// Simulate `len` returns and the latent log-volatility path.
pub fn simulate_sv(params: &SvParams, len: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    if len == 0 {
        return Err(Error::Precondition("simulation length must be >= 1".into()));
    }
    let mut rng = rng::seeded(seed);
    let mut h = Vec::with_capacity(len);
    let mut y = Vec::with_capacity(len);
    let z: f64 = StandardNormal.sample(&mut rng);
    let mut cur = params.mu + params.stationary_variance().sqrt() * z;
    for t in 0..len {
        if t > 0 {
            let eta: f64 = StandardNormal.sample(&mut rng);
            cur = params.mu + params.phi * (cur - params.mu) + params.sigma_eta * eta;
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        h.push(cur);
        y.push((cur / 2.0).exp() * eps);
    }
    Ok((y, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_invariants() {
        assert!(SvParams::new(-1.0, 0.95, 0.2).is_ok());
        assert!(SvParams::new(-1.0, 1.0, 0.2).is_err());
        assert!(SvParams::new(-1.0, -1.2, 0.2).is_err());
        assert!(SvParams::new(-1.0, 0.5, 0.0).is_err());
        assert!(SvParams::new(f64::NAN, 0.5, 0.1).is_err());
    }

    #[test]
    fn mean_correction() {
        assert_eq!(mean_correct(&[1.0, 1.0, 1.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(mean_correct(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        assert!(matches!(mean_correct(&[1.0]), Err(Error::InsufficientData(_))));
        assert!(mean_correct(&[1.0, f64::INFINITY]).is_err());

        let xs: Vec<f64> = (0..101).map(|i| ((i * 37 % 17) as f64).sqrt() - 1.3).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let out = mean_correct(&xs).unwrap();
        let scale = xs.iter().map(|v| v.abs()).sum::<f64>() / xs.len() as f64;
        assert!((out.iter().sum::<f64>() / out.len() as f64).abs() <= 1e-14 * scale);
        for (o, x) in out.iter().zip(&xs) {
            assert_eq!(*o, x - mean);
        }
    }

    #[test]
    fn price_returns() {
        let r = prices_to_log_returns(&[1.0, std::f64::consts::E, 1.0], 1.0).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] + 1.0).abs() < 1e-15);
        assert!(prices_to_log_returns(&[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = SvParams::new(-1.0, 0.95, 0.2).unwrap();
        assert_eq!(simulate_sv(&p, 500, 9).unwrap(), simulate_sv(&p, 500, 9).unwrap());
        assert_ne!(simulate_sv(&p, 500, 9).unwrap().0, simulate_sv(&p, 500, 10).unwrap().0);
    }

    #[test]
    fn degenerate_volatility_of_volatility() {
        let p = SvParams::new(-1.0, 0.95, 1e-8).unwrap();
        let (y, h) = simulate_sv(&p, 4000, 3).unwrap();
        assert!(h.iter().all(|v| (v + 1.0).abs() < 1e-6));
        let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        // Var of the sample variance of N(0, s2) is 2 s2^2 / n.
        let s2 = (-1.0f64).exp();
        assert!((var - s2).abs() < 4.0 * s2 * (2.0 / 4000.0f64).sqrt());
    }

    #[test]
    fn stationary_moment_of_h() {
        let p = SvParams::new(-1.0, 0.95, 0.2).unwrap();
        let (_, h) = simulate_sv(&p, 3000, 11).unwrap();
        let n = h.len() as f64;
        let m = h.iter().sum::<f64>() / n;
        let var = h.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        let target = p.stationary_variance();
        // MC standard error of the sample variance of an AR(1):
        // Var(s^2) ~ 2 gamma0^2 (1 + phi^2) / ((1 - phi^2) n)
        let se = target * (2.0 * (1.0 + p.phi * p.phi) / ((1.0 - p.phi * p.phi) * n)).sqrt();
        assert!((var - target).abs() <= 3.0 * se, "var {var} target {target} se {se}");
    }
}
