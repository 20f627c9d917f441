//! Synthetic panels drawn from the interactive fixed effects model.
//!
//! ```text
//! Y_it = delta_i D_it + X_it' beta + alpha_i + xi_t + lambda_i' f_t + e_it
//! ```
//!
//! Factors follow a stationary AR(1) with unit variance, loadings and unit
//! effects are standard normal (treated units drawn from the same law as
//! controls), and covariates load on the factor term so that ignoring the
//! factors biases `beta`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{PanelData, YearMonth};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub n_ctrl: usize,
    pub n_times: usize,
    /// Pre-treatment length of each treated unit.
    pub treated_t0: Vec<usize>,
    pub r: usize,
    pub beta: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// Index of a covariate generated as a persistent regime code in {0,1,2}.
    pub regime_covariate: Option<usize>,
    /// Post-treatment effect per treated unit.
    pub effects: Vec<f64>,
    pub noise_sd: f64,
    pub factor_persistence: f64,
    pub start: YearMonth,
}

impl PanelSpec {
    /// 24 controls, 166 months from 2008-03, three treated units with
    /// pre-treatment lengths 121 / 70 / 126, three factors and covariates
    /// `ird`, `er_regime`, `inf_diff`.
    pub fn adoption_study(delta: f64, noise_sd: f64) -> Self {
        Self {
            n_ctrl: 24,
            n_times: 166,
            treated_t0: vec![121, 70, 126],
            r: 3,
            beta: vec![0.3, 0.5, 0.1],
            covariate_names: vec!["ird".into(), "er_regime".into(), "inf_diff".into()],
            regime_covariate: Some(1),
            effects: vec![delta; 3],
            noise_sd,
            factor_persistence: 0.8,
            start: YearMonth { year: 2008, month: 3 },
        }
    }

    /// Control-heavy panel for factor-count recovery; `noise_sd` is set so the
    /// factor term's standard deviation is `snr` times the noise sd.
    pub fn factor_recovery(n_ctrl: usize, n_times: usize, r: usize, snr: f64) -> Self {
        Self {
            n_ctrl,
            n_times,
            treated_t0: vec![n_times * 3 / 4, n_times * 2 / 3],
            r,
            beta: vec![1.0, -0.5],
            covariate_names: vec!["x1".into(), "x2".into()],
            regime_covariate: None,
            effects: vec![0.0, 0.0],
            noise_sd: (r as f64).sqrt() / snr,
            factor_persistence: 0.5,
            start: YearMonth { year: 2000, month: 1 },
        }
    }

    pub fn with_effects(mut self, effects: Vec<f64>) -> Self {
        self.effects = effects;
        self
    }
}

/// Data-generating components of a simulated panel (rows in panel order).
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: Vec<f64>,
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub alpha: Vec<f64>,
    pub xi: Vec<f64>,
    /// Untreated potential outcome without noise.
    pub y0_systematic: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SimPanel {
    pub panel: PanelData,
    pub truth: Truth,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn simulate_panel(spec: &PanelSpec, seed: u64) -> Result<SimPanel> {
    let n_tr = spec.treated_t0.len();
    let (n, t, r, p) = (spec.n_ctrl + n_tr, spec.n_times, spec.r, spec.beta.len());
    if spec.effects.len() != n_tr || spec.covariate_names.len() != p {
        return Err(Error::Config("effects / covariate names do not match spec".into()));
    }
    if spec.treated_t0.iter().any(|&t0| t0 == 0 || t0 >= t) {
        return Err(Error::Config("each treated T0 must lie in 1..T".into()));
    }
    let mut rng = rng::seeded(seed);
    let rho = spec.factor_persistence;
    let innov = (1.0 - rho * rho).sqrt();
    let mut factors = DMatrix::zeros(t, r);
    for k in 0..r {
        factors[(0, k)] = normal(&mut rng);
        for s in 1..t {
            factors[(s, k)] = rho * factors[(s - 1, k)] + innov * normal(&mut rng);
        }
    }
    let loadings = DMatrix::from_fn(n, r, |_, _| normal(&mut rng));
    let alpha: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let xi: Vec<f64> = (0..t).map(|s| 0.5 * (s as f64 * 0.05).sin() + 0.3 * normal(&mut rng)).collect();
    let common = &loadings * factors.transpose();

    let mut covariates = Vec::with_capacity(p);
    for k in 0..p {
        let x = if spec.regime_covariate == Some(k) {
            let mut m = DMatrix::zeros(n, t);
            for i in 0..n {
                let mut code: u8 = rng.random_range(0..3);
                for s in 0..t {
                    if rng.random::<f64>() < 0.04 {
                        code = rng.random_range(0..3);
                    }
                    m[(i, s)] = code as f64;
                }
            }
            m
        } else {
            DMatrix::from_fn(n, t, |i, s| 0.5 * common[(i, s)] / (r.max(1) as f64).sqrt() + normal(&mut rng))
        };
        covariates.push(x);
    }
    let noise = DMatrix::from_fn(n, t, |_, _| spec.noise_sd * normal(&mut rng));
    let y0_systematic = DMatrix::from_fn(n, t, |i, s| {
        (0..p).map(|k| covariates[k][(i, s)] * spec.beta[k]).sum::<f64>() + alpha[i] + xi[s] + common[(i, s)]
    });
    let mut treatment = DMatrix::<u8>::zeros(n, t);
    let mut outcome = &y0_systematic + &noise;
    for (k, &t0) in spec.treated_t0.iter().enumerate() {
        let i = spec.n_ctrl + k;
        for s in t0..t {
            treatment[(i, s)] = 1;
            outcome[(i, s)] += spec.effects[k];
        }
    }
    let width = (n.max(1) as f64).log10() as usize + 1;
    let units: Vec<String> = (0..n)
        .map(|i| {
            if i < spec.n_ctrl {
                format!("C{i:0width$}")
            } else {
                format!("T{:0width$}", i - spec.n_ctrl)
            }
        })
        .collect();
    let mut times = Vec::with_capacity(t);
    let mut cur = spec.start;
    for _ in 0..t {
        times.push(cur);
        cur = cur.succ();
    }
    let panel = PanelData::from_parts(
        units,
        times,
        outcome,
        treatment,
        covariates,
        spec.covariate_names.clone(),
    )?;
    Ok(SimPanel {
        panel,
        truth: Truth {
            beta: spec.beta.clone(),
            factors,
            loadings,
            alpha,
            xi,
            y0_systematic,
            noise,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adoption_study_layout() {
        let sim = simulate_panel(&PanelSpec::adoption_study(1.0, 0.3), 1).unwrap();
        let p = &sim.panel;
        assert_eq!((p.n_units(), p.n_times(), p.n_ctrl, p.n_treated()), (27, 166, 24, 3));
        assert_eq!(p.t0, vec![121, 70, 126]);
        assert_eq!(p.times[0].to_string(), "2008-03");
        assert_eq!(p.times[165].to_string(), "2021-12");
        p.check_regime_column("er_regime").unwrap();
    }

    #[test]
    fn deterministic() {
        let spec = PanelSpec::factor_recovery(10, 40, 2, 5.0);
        assert_eq!(simulate_panel(&spec, 3).unwrap().panel, simulate_panel(&spec, 3).unwrap().panel);
    }
}
