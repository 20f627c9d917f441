//! Parametric bootstrap for the average ATT, its event-time path and the
//! covariate coefficients.
//!
//! Each replicate rebuilds the panel as a fitted systematic part plus whole
//! error rows drawn with replacement, then re-runs the point estimator with
//! the factor count held fixed. Control rows get residuals of the control
//! fit. Control residuals are orthogonal to the fitted factors, so treated
//! rows instead get prediction errors of controls treated as pseudo-treated
//! units (each left out of the factor fit and projected on the same
//! pre-period). For treated units the systematic part is `Y_hat(0)` before
//! adoption and the observed outcome after it, so draws are centred on the
//! point estimate.

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{control_residuals, event_time_path, point_fit, PointFit};
use crate::dataio::PanelData;
use crate::error::{Error, Result};
use crate::factor::{fit_ife, linalg, treated_pre_system, IfeOptions, PanelBlock};
use crate::par::{map_indexed, Execution};
use crate::rng;

pub const MIN_REPS: usize = 200;
/// Largest share of replicates that may fail before inference is abandoned.
pub const MAX_DROPPED_SHARE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiScheme {
    #[default]
    Percentile,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub reps: usize,
    pub ci: CiScheme,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            reps: 1000,
            ci: CiScheme::Percentile,
            level: 0.95,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < MIN_REPS {
            return Err(Error::Config(format!(
                "bootstrap needs at least {MIN_REPS} replicates, got {}",
                self.reps
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("confidence level {} not in (0, 1)", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathInterval {
    pub event_time: i64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefInference {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub reps: usize,
    pub dropped: usize,
    pub scheme: CiScheme,
    pub level: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
    pub path: Vec<PathInterval>,
    pub beta: Vec<CoefInference>,
    /// Retained avg ATT draws in replicate order.
    pub draws: Vec<f64>,
}

/// `2 * min(P(draw <= 0), P(draw >= 0))`, clipped to 1.
pub fn two_sided_p(draws: &[f64]) -> f64 {
    let n = draws.len() as f64;
    let le = draws.iter().filter(|&&d| d <= 0.0).count() as f64 / n;
    let ge = draws.iter().filter(|&&d| d >= 0.0).count() as f64 / n;
    (2.0 * le.min(ge)).min(1.0)
}

fn sd(draws: &[f64]) -> f64 {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn interval(estimate: f64, draws: &[f64], scheme: CiScheme, level: f64) -> (f64, f64, f64) {
    let se = sd(draws);
    let (lo, hi) = match scheme {
        CiScheme::Percentile => {
            let mut sorted = draws.to_vec();
            sorted.sort_by(f64::total_cmp);
            let a = (1.0 - level) / 2.0;
            (
                crate::svol::quantile_sorted(&sorted, a),
                crate::svol::quantile_sorted(&sorted, 1.0 - a),
            )
        }
        CiScheme::Normal => {
            let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
            (estimate - z * se, estimate + z * se)
        }
    };
    (se, lo, hi)
}

struct Draw {
    avg_att: f64,
    path: Vec<f64>,
    beta: Vec<f64>,
}

/// Prediction errors of each control left out of the factor fit and
/// projected on its first `t0` periods, one `n_ctrl x T` matrix per treated
/// unit. Controls whose leave-one-out fit fails are skipped.
fn pseudo_treated_errors(
    panel: &PanelData,
    r: usize,
    ife: &IfeOptions,
    execution: Execution,
) -> Result<Vec<DMatrix<f64>>> {
    let (n_ctrl, t) = (panel.n_ctrl, panel.n_times());
    let per_control = map_indexed(n_ctrl, execution, |j| -> Option<Vec<Vec<f64>>> {
        let keep: Vec<usize> = (0..n_ctrl).filter(|&i| i != j).collect();
        let block = PanelBlock::new(
            panel.outcome.select_rows(&keep),
            panel.covariates.iter().map(|x| x.select_rows(&keep)).collect(),
            panel.covariate_names.clone(),
        )
        .ok()?;
        let model = fit_ife(&block, r, ife).ok()?;
        panel
            .t0
            .iter()
            .map(|&t0| {
                let (z, resid) = treated_pre_system(panel, &model, j, t0);
                let coef = linalg::least_squares(&z, &DMatrix::from_column_slice(t0, 1, &resid))?;
                Some(
                    (0..t)
                        .map(|s| {
                            let xb: f64 = (0..panel.n_covariates())
                                .map(|k| panel.x(j, s, k) * model.beta[k])
                                .sum();
                            let lf: f64 = (0..r).map(|k| coef[(k, 0)] * model.factors[(s, k)]).sum();
                            panel.outcome[(j, s)] - xb - model.xi[s] - lf - coef[(r, 0)]
                        })
                        .collect(),
                )
            })
            .collect()
    });
    let ok: Vec<Vec<Vec<f64>>> = per_control.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::Singular("no control admits a leave-one-out fit".into()));
    }
    Ok((0..panel.n_treated())
        .map(|k| DMatrix::from_fn(ok.len(), t, |j, s| ok[j][k][s]))
        .collect())
}

struct Noise<'a> {
    control: &'a DMatrix<f64>,
    control_scale: f64,
    treated: &'a [DMatrix<f64>],
}

fn replicate(
    panel: &PanelData,
    base: &DMatrix<f64>,
    noise: &Noise,
    r: usize,
    ife: &IfeOptions,
    seed: u64,
    b: usize,
) -> Result<Draw> {
    let mut rng = rng::stream(seed, b as u64);
    let (n_ctrl, t) = (panel.n_ctrl, panel.n_times());
    let mut y = base.clone();
    for i in 0..panel.n_units() {
        let (rows, scale) = if i < n_ctrl {
            (noise.control, noise.control_scale)
        } else {
            (&noise.treated[i - n_ctrl], 1.0)
        };
        let src = rng.random_range(0..rows.nrows());
        for s in 0..t {
            y[(i, s)] += scale * rows[(src, s)];
        }
    }
    let fit = point_fit(&panel.with_outcome(y)?, r, ife)?;
    Ok(Draw {
        avg_att: fit.avg_att,
        path: event_time_path(&fit.effects, &panel.t0).into_iter().map(|e| e.att).collect(),
        beta: fit.model.beta,
    })
}

/// Bootstrap inference around a fitted point estimate with `r` factors.
pub fn bootstrap_inference(
    panel: &PanelData,
    fit: &PointFit,
    r: usize,
    ife: &IfeOptions,
    config: &BootstrapConfig,
    seed: u64,
    execution: Execution,
) -> Result<Inference> {
    config.validate()?;
    let (n_ctrl, t) = (panel.n_ctrl, panel.n_times());
    let resid = control_residuals(panel, &fit.model);
    let nt = n_ctrl * t;
    let dof = fit.model.dof(n_ctrl, t);
    let control_scale = if dof < nt { (nt as f64 / (nt - dof) as f64).sqrt() } else { 1.0 };
    let treated = pseudo_treated_errors(panel, r, ife, execution)?;
    let noise = Noise {
        control: &resid,
        control_scale,
        treated: &treated,
    };

    let mut base = panel.outcome.clone();
    for i in 0..n_ctrl {
        for s in 0..t {
            base[(i, s)] -= resid[(i, s)];
        }
    }
    for (k, &t0) in panel.t0.iter().enumerate() {
        for s in 0..t0 {
            base[(n_ctrl + k, s)] = fit.counterfactuals[(k, s)];
        }
    }

    let results = map_indexed(config.reps, execution, |b| {
        replicate(panel, &base, &noise, r, ife, seed, b)
    });
    let draws: Vec<Draw> = results.into_iter().filter_map(|d| d.ok()).collect();
    let dropped = config.reps - draws.len();
    if dropped as f64 > MAX_DROPPED_SHARE * config.reps as f64 || draws.len() < 2 {
        return Err(Error::TooManyFailedReplicates {
            dropped,
            total: config.reps,
        });
    }

    let avg: Vec<f64> = draws.iter().map(|d| d.avg_att).collect();
    let (se, ci_lower, ci_upper) = interval(fit.avg_att, &avg, config.ci, config.level);

    let point_path = event_time_path(&fit.effects, &panel.t0);
    let path = point_path
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let col: Vec<f64> = draws.iter().map(|d| d.path[j]).collect();
            let (se, ci_lower, ci_upper) = interval(e.att, &col, config.ci, config.level);
            PathInterval {
                event_time: e.event_time,
                se,
                ci_lower,
                ci_upper,
            }
        })
        .collect();

    let beta = fit
        .model
        .beta
        .iter()
        .enumerate()
        .map(|(k, &estimate)| {
            let col: Vec<f64> = draws.iter().map(|d| d.beta[k]).collect();
            let (se, ci_lower, ci_upper) = interval(estimate, &col, config.ci, config.level);
            CoefInference {
                name: fit.model.covariate_names[k].clone(),
                estimate,
                se,
                ci_lower,
                ci_upper,
                p_value: two_sided_p(&col),
            }
        })
        .collect();

    Ok(Inference {
        reps: config.reps,
        dropped,
        scheme: config.ci,
        level: config.level,
        se,
        ci_lower,
        ci_upper,
        p_value: two_sided_p(&avg),
        path,
        beta,
        draws: avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn p_value_examples() {
        assert_eq!(two_sided_p(&[1.0, 2.0, 3.0, 4.0]), 0.0);
        assert_eq!(two_sided_p(&[-1.0, 1.0, 2.0, 3.0]), 0.5);
        assert_eq!(two_sided_p(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn reps_floor() {
        let cfg = BootstrapConfig {
            reps: 199,
            ..BootstrapConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(BootstrapConfig::default().validate().is_ok());
    }

    #[test]
    fn normal_interval_is_symmetric() {
        let draws: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let (se, lo, hi) = interval(2.0, &draws, CiScheme::Normal, 0.95);
        assert!(((hi - 2.0) - (2.0 - lo)).abs() < 1e-12);
        assert!(((hi - lo) / (2.0 * se) - 1.959964).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn p_value_in_unit_interval(draws in prop::collection::vec(-5.0f64..5.0, 1..50)) {
            let p = two_sided_p(&draws);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn interval_is_ordered(draws in prop::collection::vec(-5.0f64..5.0, 2..50), normal in any::<bool>()) {
            let scheme = if normal { CiScheme::Normal } else { CiScheme::Percentile };
            let (_, lo, hi) = interval(0.3, &draws, scheme, 0.95);
            prop_assert!(lo <= hi);
        }
    }
}
