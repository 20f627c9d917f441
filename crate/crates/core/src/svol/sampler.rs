use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mixture::{self, N_COMPONENTS};
use super::particle::filter_volatility;
use super::SvParams;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Prior hyperparameters.
///
/// `mu ~ N(mu_mean, mu_var)`, `(phi + 1) / 2 ~ Beta(phi_a, phi_b)`,
/// `sigma_eta^2 ~ InvGamma(sigma2_shape, sigma2_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvPriors {
    pub mu_mean: f64,
    pub mu_var: f64,
    pub phi_a: f64,
    pub phi_b: f64,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
}

impl Default for SvPriors {
    fn default() -> Self {
        Self {
            mu_mean: 0.0,
            mu_var: 100.0,
            phi_a: 20.0,
            phi_b: 1.5,
            sigma2_shape: 2.5,
            sigma2_scale: 0.025,
        }
    }
}

/// Which daily log-volatility estimate feeds downstream aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolatilitySource {
    /// `E[h_t | y_1..y_t]` from the particle filter.
    #[default]
    Filtered,
    /// `E[h_t | y_1..y_T]` from the Gibbs draws.
    Smoothed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub priors: SvPriors,
    pub seed: u64,
    /// Offset `c = offset_scale * var(y)` inside `ln(y^2 + c)`.
    pub offset_scale: f64,
    pub n_particles: usize,
}

impl Default for SvConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 1_000,
            priors: SvPriors::default(),
            seed: 0,
            offset_scale: 1e-4,
            n_particles: 10_000,
        }
    }
}

impl SvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in < 1 || self.iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "need iterations ({}) > burn_in ({}) >= 1",
                self.iterations, self.burn_in
            )));
        }
        if !(self.offset_scale >= 0.0 && self.offset_scale.is_finite()) {
            return Err(Error::Config(format!(
                "offset_scale {} must be >= 0",
                self.offset_scale
            )));
        }
        let p = &self.priors;
        if !(p.mu_var > 0.0 && p.phi_a > 0.0 && p.phi_b > 0.0)
            || !(p.sigma2_shape > 0.0 && p.sigma2_scale > 0.0)
        {
            return Err(Error::Config("prior hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvDiagnostics {
    pub phi_acceptance: f64,
    pub ess_mu: f64,
    pub ess_phi: f64,
    pub ess_sigma_eta: f64,
    /// Offset actually added inside the log-square transform.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvPosterior {
    pub draws: Vec<SvParams>,
    pub posterior_mean: SvParams,
    pub h_filtered: Vec<f64>,
    pub h_smoothed: Vec<f64>,
    pub diagnostics: SvDiagnostics,
}

impl SvPosterior {
    /// Equal-tailed credible interval for `mu`, `phi` and `sigma_eta`.
    pub fn credible_intervals(&self, level: f64) -> [(f64, f64); 3] {
        let pick: [fn(&SvParams) -> f64; 3] = [|p| p.mu, |p| p.phi, |p| p.sigma_eta];
        pick.map(|f| {
            let mut v: Vec<f64> = self.draws.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            let a = (1.0 - level) / 2.0;
            (quantile_sorted(&v, a), quantile_sorted(&v, 1.0 - a))
        })
    }

    pub fn h(&self, source: VolatilitySource) -> &[f64] {
        match source {
            VolatilitySource::Filtered => &self.h_filtered,
            VolatilitySource::Smoothed => &self.h_smoothed,
        }
    }
}

/// Linear interpolation quantile of sorted data (type 7).
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `ln(y_t^2 + offset)`, the linearized observation.
pub fn linearize(returns: &[f64], offset: f64) -> Result<Vec<f64>> {
    returns
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let v = (y * y + offset).ln();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidInput(format!(
                    "return {y} at t={} cannot be log-squared with offset {offset}",
                    t + 1
                )))
            }
        })
        .collect()
}

/// Auxiliary-mixture Gibbs sampler. `returns` must already be mean-corrected.
pub fn estimate_sv(returns: &[f64], config: &SvConfig) -> Result<SvPosterior> {
    config.validate()?;
    let n = returns.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 returns, got {n}")));
    }
    if returns.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite return".into()));
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let offset = config.offset_scale * var;
    let ystar = linearize(returns, offset)?;

    let mut rng = rng::stream(config.seed, 0);
    let mut state = GibbsState::init(&ystar);
    let comps = mixture::components();
    let priors = &config.priors;

    let kept = config.iterations - config.burn_in;
    let mut draws = Vec::with_capacity(kept);
    let mut h_sum = vec![0.0; n];
    let mut accepted = 0usize;
    let mut ffbs = Ffbs::new(n);

    for it in 0..config.iterations {
        state.draw_indicators(&ystar, &comps, &mut rng);
        let params = state.params();
        ffbs.draw(&ystar, &state.s, &mut state.h, params, &mut rng);
        state.draw_sigma2(priors, &mut rng);
        accepted += state.draw_phi(priors, &mut rng) as usize;
        state.draw_mu(priors, &mut rng);
        if it >= config.burn_in {
            draws.push(state.params());
            for (acc, h) in h_sum.iter_mut().zip(&state.h) {
                *acc += h;
            }
        }
    }

    let k = kept as f64;
    let mean_of = |f: fn(&SvParams) -> f64| draws.iter().map(f).sum::<f64>() / k;
    let posterior_mean = SvParams {
        mu: mean_of(|p| p.mu),
        phi: mean_of(|p| p.phi),
        sigma_eta: mean_of(|p| p.sigma_eta),
    };
    let series = |f: fn(&SvParams) -> f64| draws.iter().map(f).collect::<Vec<_>>();
    let diagnostics = SvDiagnostics {
        phi_acceptance: accepted as f64 / config.iterations as f64,
        ess_mu: effective_sample_size(&series(|p| p.mu)),
        ess_phi: effective_sample_size(&series(|p| p.phi)),
        ess_sigma_eta: effective_sample_size(&series(|p| p.sigma_eta)),
        offset,
    };
    let filtered = filter_volatility(
        returns,
        &posterior_mean,
        config.n_particles,
        config.seed.wrapping_add(1),
    )?;

    Ok(SvPosterior {
        draws,
        posterior_mean,
        h_filtered: filtered.mean,
        h_smoothed: h_sum.into_iter().map(|s| s / k).collect(),
        diagnostics,
    })
}

struct GibbsState {
    h: Vec<f64>,
    s: Vec<u8>,
    mu: f64,
    phi: f64,
    sigma2: f64,
}

impl GibbsState {
    fn init(ystar: &[f64]) -> Self {
        let n = ystar.len() as f64;
        let mu = ystar.iter().sum::<f64>() / n + mixture::MEAN_OFFSET;
        Self {
            h: vec![mu; ystar.len()],
            s: vec![0; ystar.len()],
            mu,
            phi: 0.95,
            sigma2: 0.02,
        }
    }

    fn params(&self) -> SvParams {
        SvParams {
            mu: self.mu,
            phi: self.phi,
            sigma_eta: self.sigma2.sqrt(),
        }
    }

    fn draw_indicators(&mut self, ystar: &[f64], comps: &[mixture::Component; 7], rng: &mut Rng) {
        let mut lw = [0.0; N_COMPONENTS];
        for ((s, &y), &h) in self.s.iter_mut().zip(ystar).zip(&self.h) {
            let d = y - h;
            let mut max = f64::NEG_INFINITY;
            for (w, c) in lw.iter_mut().zip(comps) {
                let e = d - c.mean;
                *w = c.log_norm + c.neg_half_prec * e * e;
                max = max.max(*w);
            }
            let mut total = 0.0;
            for w in lw.iter_mut() {
                *w = (*w - max).exp();
                total += *w;
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = N_COMPONENTS - 1;
            for (i, w) in lw.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            *s = pick as u8;
        }
    }

    /// Sum of squared AR(1) innovations including the stationary first term.
    fn innovation_ss(&self) -> f64 {
        let (mu, phi) = (self.mu, self.phi);
        let first = (1.0 - phi * phi) * (self.h[0] - mu).powi(2);
        first
            + self
                .h
                .windows(2)
                .map(|w| (w[1] - mu - phi * (w[0] - mu)).powi(2))
                .sum::<f64>()
    }

    fn draw_sigma2(&mut self, p: &SvPriors, rng: &mut Rng) {
        let shape = p.sigma2_shape + self.h.len() as f64 / 2.0;
        let rate = p.sigma2_scale + 0.5 * self.innovation_ss();
        let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
        self.sigma2 = 1.0 / g.sample(rng);
    }

    fn log_phi_target(&self, phi: f64, p: &SvPriors) -> f64 {
        (p.phi_a - 1.0) * ((1.0 + phi) / 2.0).ln() + (p.phi_b - 1.0) * ((1.0 - phi) / 2.0).ln()
            + 0.5 * (1.0 - phi * phi).ln()
            - (1.0 - phi * phi) * (self.h[0] - self.mu).powi(2) / (2.0 * self.sigma2)
    }

    /// Independence Metropolis-Hastings step with the conditional-regression proposal.
    fn draw_phi(&mut self, p: &SvPriors, rng: &mut Rng) -> bool {
        let mu = self.mu;
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for w in self.h.windows(2) {
            let x = w[0] - mu;
            sxx += x * x;
            sxy += x * (w[1] - mu);
        }
        if sxx <= 0.0 {
            return false;
        }
        let z: f64 = StandardNormal.sample(rng);
        let prop = sxy / sxx + (self.sigma2 / sxx).sqrt() * z;
        let u: f64 = rng.random();
        if prop.abs() >= 1.0 {
            return false;
        }
        let log_ratio = self.log_phi_target(prop, p) - self.log_phi_target(self.phi, p);
        if u.ln() < log_ratio {
            self.phi = prop;
            true
        } else {
            false
        }
    }

    fn draw_mu(&mut self, p: &SvPriors, rng: &mut Rng) {
        let (phi, s2) = (self.phi, self.sigma2);
        let n = self.h.len() as f64;
        let prec = 1.0 / p.mu_var + ((1.0 - phi * phi) + (n - 1.0) * (1.0 - phi).powi(2)) / s2;
        let sum: f64 = self.h.windows(2).map(|w| w[1] - phi * w[0]).sum();
        let b = p.mu_mean / p.mu_var + ((1.0 - phi * phi) * self.h[0] + (1.0 - phi) * sum) / s2;
        let z: f64 = StandardNormal.sample(rng);
        self.mu = b / prec + z / prec.sqrt();
    }
}

/// Forward-filter backward-sample for the mixture-conditional linear Gaussian model
/// `ystar_t - m_{s_t} = h_t + N(0, v_{s_t})`.
struct Ffbs {
    filt_mean: Vec<f64>,
    filt_var: Vec<f64>,
}

impl Ffbs {
    fn new(n: usize) -> Self {
        Self {
            filt_mean: vec![0.0; n],
            filt_var: vec![0.0; n],
        }
    }

    fn draw(&mut self, ystar: &[f64], s: &[u8], h: &mut [f64], p: SvParams, rng: &mut Rng) {
        let n = ystar.len();
        let (mu, phi) = (p.mu, p.phi);
        let s2 = p.sigma_eta * p.sigma_eta;
        let mut a = mu;
        let mut pvar = s2 / (1.0 - phi * phi);
        for t in 0..n {
            let k = s[t] as usize;
            let obs_var = mixture::VARIANCES[k];
            let resid = ystar[t] - mixture::component_mean(k) - a;
            let gain = pvar / (pvar + obs_var);
            let m = a + gain * resid;
            let c = pvar * obs_var / (pvar + obs_var);
            self.filt_mean[t] = m;
            self.filt_var[t] = c;
            a = mu + phi * (m - mu);
            pvar = phi * phi * c + s2;
        }
        let z: f64 = StandardNormal.sample(rng);
        h[n - 1] = self.filt_mean[n - 1] + self.filt_var[n - 1].sqrt() * z;
        for t in (0..n - 1).rev() {
            let (m, c) = (self.filt_mean[t], self.filt_var[t]);
            let pred_var = phi * phi * c + s2;
            let pred_mean = mu + phi * (m - mu);
            let j = c * phi / pred_var;
            let mean = m + j * (h[t + 1] - pred_mean);
            let var = (c - j * phi * c).max(0.0);
            let z: f64 = StandardNormal.sample(rng);
            h[t] = mean + var.sqrt() * z;
        }
    }
}

/// Effective sample size via Geyer's initial positive sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let gamma0 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if gamma0 <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * gamma0);
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let rho0 = if lag == 0 { 1.0 } else { acf(lag) };
        let pair = rho0 + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    (n as f64 / tau.max(1e-12)).min(n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svol::simulate_sv;

    #[test]
    fn config_validation() {
        let cfg = SvConfig {
            iterations: 100,
            burn_in: 100,
            ..SvConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = SvConfig {
            burn_in: 0,
            ..SvConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SvConfig::default().validate().is_ok());
    }

    #[test]
    fn linearization_matches_two_log_abs() {
        let ys = [1e-8, -3.5, 0.25, 7.0e3, -1e-3];
        let out = linearize(&ys, 0.0).unwrap();
        for (o, y) in out.iter().zip(ys) {
            assert!((o - 2.0 * y.abs().ln()).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_return_without_offset_is_input_error() {
        assert!(matches!(linearize(&[0.1, 0.0], 0.0), Err(Error::InvalidInput(_))));
        assert!(linearize(&[0.1, 0.0], 1e-6).unwrap()[1].is_finite());
    }

    #[test]
    fn zero_returns_handled_by_offset() {
        let mut y = vec![0.5, -0.2, 0.0, 0.3, 0.0, -0.7, 0.1, 0.0, 0.4, -0.3];
        y = crate::svol::mean_correct(&y).unwrap();
        y[2] = 0.0;
        let cfg = SvConfig {
            iterations: 60,
            burn_in: 10,
            n_particles: 200,
            ..SvConfig::default()
        };
        let post = estimate_sv(&y, &cfg).unwrap();
        assert_eq!(post.draws.len(), 50);
        assert!(post.h_smoothed.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn draw_count_and_determinism() {
        let p = SvParams::new(-1.0, 0.95, 0.2).unwrap();
        let (y, _) = simulate_sv(&p, 300, 5).unwrap();
        let y = crate::svol::mean_correct(&y).unwrap();
        let cfg = SvConfig {
            iterations: 400,
            burn_in: 100,
            seed: 17,
            n_particles: 500,
            ..SvConfig::default()
        };
        let a = estimate_sv(&y, &cfg).unwrap();
        let b = estimate_sv(&y, &cfg).unwrap();
        assert_eq!(a.draws.len(), 300);
        assert_eq!(a, b);
        assert!(a.draws.iter().all(|d| d.validate().is_ok()));
        assert_eq!(a.h_filtered.len(), 300);
        let [ci_mu, _, _] = a.credible_intervals(0.9);
        assert!(ci_mu.0 <= ci_mu.1);
    }

    #[test]
    fn near_constant_volatility_concentrates_on_mu() {
        let p = SvParams::new(-1.0, 0.95, 1e-4).unwrap();
        let (y, _) = simulate_sv(&p, 1500, 21).unwrap();
        let y = crate::svol::mean_correct(&y).unwrap();
        // A tight variance prior pins sigma_eta near zero.
        let cfg = SvConfig {
            iterations: 3000,
            burn_in: 500,
            seed: 2,
            n_particles: 1000,
            priors: SvPriors {
                sigma2_shape: 1000.0,
                sigma2_scale: 1e-5,
                ..SvPriors::default()
            },
            ..SvConfig::default()
        };
        let post = estimate_sv(&y, &cfg).unwrap();
        let mu = post.posterior_mean.mu;
        assert!((mu + 1.0).abs() < 0.1, "mu {mu}");
        assert!(post.h_smoothed.iter().all(|h| (h - mu).abs() < 0.1));
    }

    #[test]
    fn ess_of_iid_and_correlated_chains() {
        let mut r = rng::seeded(1);
        let iid: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut r)).collect();
        let ess = effective_sample_size(&iid);
        assert!(ess > 3000.0, "{ess}");
        let mut ar = vec![0.0; 4000];
        for t in 1..4000 {
            let z: f64 = StandardNormal.sample(&mut r);
            ar[t] = 0.9 * ar[t - 1] + z;
        }
        // Theoretical ESS ratio (1 - 0.9) / (1 + 0.9) ~ 0.053
        let ess = effective_sample_size(&ar);
        assert!(ess > 100.0 && ess < 500.0, "{ess}");
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.125), 1.5);
    }
}
