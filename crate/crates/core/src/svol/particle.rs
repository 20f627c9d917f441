//! Auxiliary particle filter (Pitt & Shephard) for the SV state.
//!
//! First-stage weights look ahead with the predicted state mean. When their
//! effective sample size drops below half the particle count the cloud is
//! resampled (stratified) from them and second-stage weights correct for the
//! look-ahead; otherwise particles are propagated in place with a plain
//! importance update.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SvParams;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const MIN_PARTICLES: usize = 100;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleFilterOutput {
    /// Filtered mean of h_t given y_1..y_t.
    pub mean: Vec<f64>,
    /// Effective sample size after weighting at each t.
    pub ess: Vec<f64>,
    /// Number of resampling events.
    pub resamples: usize,
}

#[inline]
fn log_obs_density(y: f64, h: f64) -> f64 {
    -0.5 * (LN_2PI + h + y * y * (-h).exp())
}

/// Normalize log weights in place into probabilities; returns the ESS, or
/// `None` if no weight is finite.
fn normalize(logw: &[f64], w: &mut [f64]) -> Option<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut total = 0.0;
    for (wi, &lw) in w.iter_mut().zip(logw) {
        *wi = if lw.is_nan() { 0.0 } else { (lw - max).exp() };
        total += *wi;
    }
    if !(total > 0.0) {
        return None;
    }
    let mut sq = 0.0;
    for wi in w.iter_mut() {
        *wi /= total;
        sq += *wi * *wi;
    }
    Some(1.0 / sq)
}

/// Stratified resampling: one uniform per stratum `[i/n, (i+1)/n)`.
fn stratified(weights: &[f64], out: &mut [usize], rng: &mut Rng) {
    let n = out.len();
    let mut cum = weights[0];
    let mut j = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let u = (i as f64 + rng.random::<f64>()) / n as f64;
        while u > cum && j + 1 < weights.len() {
            j += 1;
            cum += weights[j];
        }
        *slot = j;
    }
}

/// Filtered log-volatility `E[h_t | y_1..y_t]` for demeaned returns.
pub fn filter_volatility(
    returns: &[f64],
    params: &SvParams,
    n_particles: usize,
    seed: u64,
) -> Result<ParticleFilterOutput> {
    params.validate()?;
    if n_particles < MIN_PARTICLES {
        return Err(Error::Precondition(format!(
            "n_particles = {n_particles} is below the floor of {MIN_PARTICLES}"
        )));
    }
    if returns.is_empty() {
        return Err(Error::InsufficientData("empty return series".into()));
    }
    if returns.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite return".into()));
    }
    let (mu, phi, sig) = (params.mu, params.phi, params.sigma_eta);
    let mut rng = rng::seeded(seed);
    let n = n_particles;

    let mut x = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut logw = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut pred = vec![0.0; n];
    let mut first = vec![0.0; n];
    let mut ancestors: Vec<usize> = (0..n).collect();

    let sd0 = params.stationary_variance().sqrt();
    for (xi, lw) in x.iter_mut().zip(logw.iter_mut()) {
        let z: f64 = StandardNormal.sample(&mut rng);
        *xi = mu + sd0 * z;
        *lw = log_obs_density(returns[0], *xi);
    }
    let mut out = ParticleFilterOutput {
        mean: Vec::with_capacity(returns.len()),
        ess: Vec::with_capacity(returns.len()),
        resamples: 0,
    };
    let ess = normalize(&logw, &mut w).ok_or(Error::Degeneracy { t: 1 })?;
    out.mean.push(x.iter().zip(&w).map(|(a, b)| a * b).sum());
    out.ess.push(ess);

    for (t, &y) in returns.iter().enumerate().skip(1) {
        // w holds normalized weights of x at t-1
        for i in 0..n {
            pred[i] = mu + phi * (x[i] - mu);
            first[i] = w[i].ln() + log_obs_density(y, pred[i]);
        }
        let mut lambda = std::mem::take(&mut x_new);
        let ess_first =
            normalize(&first, &mut lambda).ok_or(Error::Degeneracy { t: t + 1 })?;
        if ess_first < n as f64 / 2.0 {
            stratified(&lambda, &mut ancestors, &mut rng);
            out.resamples += 1;
            for i in 0..n {
                let a = ancestors[i];
                let z: f64 = StandardNormal.sample(&mut rng);
                let h = pred[a] + sig * z;
                lambda[i] = h;
                logw[i] = log_obs_density(y, h) - log_obs_density(y, pred[a]);
            }
        } else {
            for i in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let h = pred[i] + sig * z;
                lambda[i] = h;
                logw[i] = w[i].ln() + log_obs_density(y, h);
            }
        }
        x_new = std::mem::replace(&mut x, lambda);
        let ess = normalize(&logw, &mut w).ok_or(Error::Degeneracy { t: t + 1 })?;
        out.mean.push(x.iter().zip(&w).map(|(a, b)| a * b).sum());
        out.ess.push(ess);
    }
    Ok(out)
}
