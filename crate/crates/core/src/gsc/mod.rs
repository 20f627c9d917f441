//! Generalized synthetic control: counterfactuals for treated units from an
//! interactive fixed effects model fitted on the control pool, the
//! event-time ATT path, the average ATT and bootstrap inference.

mod bootstrap;

pub use bootstrap::{bootstrap_inference, BootstrapConfig, CiScheme, CoefInference, Inference, PathInterval};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataio::{PanelData, YearMonth};
use crate::error::{Error, Result};
use crate::factor::{
    cross_validate, fit_ife, project_loadings, residuals, CvOptions, CvTable, FactorModel,
    IfeInit, IfeOptions, PanelBlock,
};
use crate::par::Execution;

/// How the number of latent factors is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorSelection {
    Fixed(usize),
    /// Cross-validate over `0..=max`.
    Auto { max: usize },
}

impl Default for FactorSelection {
    fn default() -> Self {
        FactorSelection::Auto { max: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GscConfig {
    pub factors: FactorSelection,
    /// Covariates to use (all panel covariates when `None`).
    pub covariates: Option<Vec<String>>,
    pub tol: f64,
    pub max_iter: usize,
    /// `None` skips inference (point estimates only).
    pub bootstrap: Option<BootstrapConfig>,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for GscConfig {
    fn default() -> Self {
        Self {
            factors: FactorSelection::default(),
            covariates: None,
            tol: 1e-7,
            max_iter: 2000,
            bootstrap: Some(BootstrapConfig::default()),
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl GscConfig {
    pub fn ife_options(&self) -> IfeOptions {
        IfeOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            init: IfeInit::TwoWay,
        }
    }

    pub fn point_only(mut self) -> Self {
        self.bootstrap = None;
        self
    }
}

/// Projected treated-unit loadings and unit effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatedLoadings {
    /// N_treat x r.
    pub lambda: DMatrix<f64>,
    pub alpha: Vec<f64>,
}

/// ATT at one event time (0 = first treated period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTimeAtt {
    pub event_time: i64,
    pub att: f64,
    /// Treated units observed at this event time.
    pub n_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttResult {
    pub treated_units: Vec<String>,
    pub times: Vec<YearMonth>,
    pub t0: Vec<usize>,
    pub att_path: Vec<EventTimeAtt>,
    /// N_treat x T, `Y - Y_hat(0)`.
    pub individual_effects: DMatrix<f64>,
    pub avg_att: f64,
    /// N_treat x T counterfactual outcomes.
    pub counterfactuals: DMatrix<f64>,
    /// N_treat x T observed outcomes.
    pub treated_outcomes: DMatrix<f64>,
    /// Control-fitted model extended with treated loadings (rows after `n_estimation`).
    pub model: FactorModel,
    pub cv: Option<CvTable>,
    /// Standard deviation of `Y - X'beta - alpha - xi` over untreated cells.
    pub residualized_sd: f64,
    pub inference: Option<Inference>,
}

impl AttResult {
    /// Event-time ATT restricted to pre-treatment (negative) event times.
    pub fn pre_path(&self) -> impl Iterator<Item = &EventTimeAtt> {
        self.att_path.iter().filter(|e| e.event_time < 0)
    }
}

/// Counterfactual untreated outcomes for every treated unit and period.
pub fn estimate_counterfactual(
    panel: &PanelData,
    model: &FactorModel,
    loadings: &TreatedLoadings,
) -> Result<DMatrix<f64>> {
    let n_tr = panel.n_treated();
    if loadings.lambda.ncols() != model.r || model.factors.ncols() != model.r {
        return Err(Error::Dimension(format!(
            "loadings have {} columns, factors {}, model r = {}",
            loadings.lambda.ncols(),
            model.factors.ncols(),
            model.r
        )));
    }
    if loadings.lambda.nrows() != n_tr || loadings.alpha.len() != n_tr {
        return Err(Error::Dimension(format!(
            "{} loading rows / {} unit effects for {n_tr} treated units",
            loadings.lambda.nrows(),
            loadings.alpha.len()
        )));
    }
    if model.factors.nrows() != panel.n_times() || model.beta.len() != panel.n_covariates() {
        return Err(Error::Dimension("model does not match panel periods / covariates".into()));
    }
    let t = panel.n_times();
    Ok(DMatrix::from_fn(n_tr, t, |k, s| {
        let i = panel.n_ctrl + k;
        let xb: f64 = (0..panel.n_covariates())
            .map(|c| panel.x(i, s, c) * model.beta[c])
            .sum();
        let lf: f64 = (0..model.r)
            .map(|j| loadings.lambda[(k, j)] * model.factors[(s, j)])
            .sum();
        xb + loadings.alpha[k] + model.xi[s] + lf
    }))
}

/// Least-squares loadings and unit effect of each treated unit from its
/// pre-treatment residual `Y - X'beta - xi` on `[F_pre, 1]`.
pub fn treated_loadings(panel: &PanelData, model: &FactorModel) -> Result<TreatedLoadings> {
    let n_tr = panel.n_treated();
    let r = model.r;
    let mut lambda = DMatrix::zeros(n_tr, r);
    let mut alpha = vec![0.0; n_tr];
    for (k, i) in panel.treated_indices().enumerate() {
        let (z, resid) = crate::factor::treated_pre_system(panel, model, i, panel.t0[k]);
        let coef = project_loadings(&z, &DMatrix::from_column_slice(resid.len(), 1, &resid))?;
        for j in 0..r {
            lambda[(k, j)] = coef[(0, j)];
        }
        alpha[k] = coef[(0, r)];
    }
    Ok(TreatedLoadings { lambda, alpha })
}

/// Mean of `effects` over post-treatment cells (row `k` is post from `t0[k]`).
pub fn post_treatment_mean(effects: &DMatrix<f64>, t0: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, &start) in t0.iter().enumerate() {
        for s in start..effects.ncols() {
            sum += effects[(k, s)];
            count += 1;
        }
    }
    sum / count as f64
}

/// Event-time average of per-unit effects, `e = t - T0_i`.
pub fn event_time_path(effects: &DMatrix<f64>, t0: &[usize]) -> Vec<EventTimeAtt> {
    let t = effects.ncols() as i64;
    let Some(&max_t0) = t0.iter().max() else {
        return Vec::new();
    };
    let min_t0 = *t0.iter().min().unwrap();
    (-(max_t0 as i64)..t - min_t0 as i64)
        .map(|e| {
            let (sum, n) = t0.iter().enumerate().fold((0.0, 0usize), |(s, n), (k, &t0k)| {
                let cal = t0k as i64 + e;
                if (0..t).contains(&cal) {
                    (s + effects[(k, cal as usize)], n + 1)
                } else {
                    (s, n)
                }
            });
            EventTimeAtt {
                event_time: e,
                att: sum / n as f64,
                n_units: n,
            }
        })
        .collect()
}

/// Point estimate with a fixed factor count, the input to the bootstrap.
#[derive(Debug, Clone)]
pub struct PointFit {
    pub model: FactorModel,
    pub loadings: TreatedLoadings,
    pub counterfactuals: DMatrix<f64>,
    pub effects: DMatrix<f64>,
    pub avg_att: f64,
}

/// Fit on controls with `r` factors, project treated loadings and form effects.
pub fn point_fit(panel: &PanelData, r: usize, ife: &IfeOptions) -> Result<PointFit> {
    let block = PanelBlock::controls(panel);
    let model = fit_ife(&block, r, ife)?;
    let loadings = treated_loadings(panel, &model)?;
    let counterfactuals = estimate_counterfactual(panel, &model, &loadings)?;
    let observed = panel.outcome.rows(panel.n_ctrl, panel.n_treated());
    let effects = &observed - &counterfactuals;
    let avg_att = post_treatment_mean(&effects, &panel.t0);
    Ok(PointFit {
        model,
        loadings,
        counterfactuals,
        effects,
        avg_att,
    })
}

fn prepare(panel: &PanelData, config: &GscConfig) -> Result<PanelData> {
    if panel.n_treated() == 0 {
        return Err(Error::Estimand("panel has no treated units".into()));
    }
    if panel.n_ctrl == 0 {
        return Err(Error::Estimand("panel has no control units".into()));
    }
    match &config.covariates {
        Some(names) => panel.select_covariates(names),
        None => Ok(panel.clone()),
    }
}

/// Full pipeline: factor selection, control fit, loading projection,
/// counterfactuals, ATT path and (optionally) bootstrap inference.
pub fn estimate_att(panel: &PanelData, config: &GscConfig) -> Result<AttResult> {
    let panel = prepare(panel, config)?;
    let ife = config.ife_options();
    let (r, cv) = match config.factors {
        FactorSelection::Fixed(r) => (r, None),
        FactorSelection::Auto { max } => {
            let table = cross_validate(
                &panel,
                0..=max,
                &CvOptions {
                    ife: ife.clone(),
                    execution: config.execution,
                },
            )?;
            (table.selected_r, Some(table))
        }
    };
    let fit = point_fit(&panel, r, &ife)?;
    let inference = match &config.bootstrap {
        Some(b) => Some(bootstrap_inference(&panel, &fit, r, &ife, b, config.seed, config.execution)?),
        None => None,
    };
    let residualized_sd = residualized_sd(&panel, &fit);
    let att_path = event_time_path(&fit.effects, &panel.t0);

    let mut model = fit.model;
    let n_ctrl = panel.n_ctrl;
    let mut all_loadings = DMatrix::zeros(panel.n_units(), r);
    all_loadings.rows_mut(0, n_ctrl).copy_from(&model.loadings);
    all_loadings
        .rows_mut(n_ctrl, panel.n_treated())
        .copy_from(&fit.loadings.lambda);
    model.loadings = all_loadings;
    model.alpha.extend_from_slice(&fit.loadings.alpha);

    Ok(AttResult {
        treated_units: panel.treated_set().to_vec(),
        times: panel.times.clone(),
        t0: panel.t0.clone(),
        att_path,
        individual_effects: fit.effects,
        avg_att: fit.avg_att,
        counterfactuals: fit.counterfactuals,
        treated_outcomes: panel.outcome.rows(n_ctrl, panel.n_treated()).into_owned(),
        model,
        cv,
        residualized_sd,
        inference,
    })
}

fn residualized_sd(panel: &PanelData, fit: &PointFit) -> f64 {
    let m = &fit.model;
    let mut vals = Vec::new();
    for i in 0..panel.n_units() {
        let (alpha, pre) = if i < panel.n_ctrl {
            (m.alpha[i], panel.n_times())
        } else {
            let k = i - panel.n_ctrl;
            (fit.loadings.alpha[k], panel.t0[k])
        };
        for t in 0..pre {
            let xb: f64 = (0..panel.n_covariates()).map(|c| panel.x(i, t, c) * m.beta[c]).sum();
            vals.push(panel.outcome[(i, t)] - xb - alpha - m.xi[t]);
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Re-run [`estimate_att`] with the treated set restricted to one unit.
pub fn estimate_per_unit(panel: &PanelData, unit: &str, config: &GscConfig) -> Result<AttResult> {
    let i = panel
        .unit_index(unit)
        .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
    if i < panel.n_ctrl {
        return Err(Error::UnknownUnit(format!("{unit} is not treated")));
    }
    let mut keep: Vec<usize> = panel.control_indices().collect();
    keep.push(i);
    estimate_att(&panel.select_units(&keep)?, config)
}

/// Residuals of the control fit (used by the bootstrap).
pub(crate) fn control_residuals(panel: &PanelData, model: &FactorModel) -> DMatrix<f64> {
    residuals(model, &PanelBlock::controls(panel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_panel, PanelSpec};

    fn noiseless(delta: f64) -> PanelData {
        let mut spec = PanelSpec::adoption_study(delta, 0.0);
        spec.n_times = 80;
        spec.treated_t0 = vec![50, 40, 60];
        simulate_panel(&spec, 5).unwrap().panel
    }

    // the default tolerance leaves O(tol / 10) error in noiseless fits
    fn exact_config() -> GscConfig {
        GscConfig {
            factors: FactorSelection::Fixed(3),
            tol: 1e-11,
            ..GscConfig::default().point_only()
        }
    }

    #[test]
    fn null_reconstruction_is_exact() {
        let panel = noiseless(0.0);
        let res = estimate_att(&panel, &exact_config()).unwrap();
        assert!(res.avg_att.abs() < 1e-8, "{}", res.avg_att);
        let observed = panel.outcome.rows(panel.n_ctrl, 3);
        assert!((&res.counterfactuals - observed).amax() < 1e-8);
        assert!(res.pre_path().all(|e| e.att.abs() < 1e-8));
    }

    #[test]
    fn constant_effect_is_recovered_exactly_without_noise() {
        let panel = noiseless(1.0);
        let res = estimate_att(&panel, &exact_config()).unwrap();
        for k in 0..3 {
            for t in 0..80 {
                let expect = if t >= panel.t0[k] { 1.0 } else { 0.0 };
                assert!((res.individual_effects[(k, t)] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn avg_att_matches_individual_effects() {
        let sim = simulate_panel(&PanelSpec::adoption_study(0.5, 0.3), 2).unwrap();
        let res = estimate_att(&sim.panel, &GscConfig { factors: FactorSelection::Fixed(2), ..GscConfig::default().point_only() }).unwrap();
        assert_eq!(res.avg_att, post_treatment_mean(&res.individual_effects, &res.t0));
        let cells: usize = res.t0.iter().map(|t0| 166 - t0).sum();
        assert_eq!(cells, 45 + 96 + 40);
    }

    #[test]
    fn event_time_alignment_pads_missing_units() {
        let effects = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, 0.0, 3.0, 3.0, 3.0]);
        let path = event_time_path(&effects, &[2, 1]);
        let es: Vec<i64> = path.iter().map(|e| e.event_time).collect();
        assert_eq!(es, vec![-2, -1, 0, 1, 2]);
        assert_eq!(path[0].n_units, 1);
        assert_eq!(path[2].att, 2.0);
        assert_eq!(path[4].n_units, 1);
        assert_eq!(path[4].att, 3.0);
    }

    #[test]
    fn counterfactual_shape_errors() {
        let panel = noiseless(0.0);
        let fit = point_fit(&panel, 2, &IfeOptions::default()).unwrap();
        let bad = TreatedLoadings {
            lambda: DMatrix::zeros(3, 1),
            alpha: vec![0.0; 3],
        };
        assert!(matches!(estimate_counterfactual(&panel, &fit.model, &bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn lookup_errors() {
        let panel = noiseless(0.0);
        let cfg = GscConfig::default().point_only();
        assert!(matches!(estimate_per_unit(&panel, "nope", &cfg), Err(Error::UnknownUnit(_))));
        let ctrl = panel.units[0].clone();
        assert!(matches!(estimate_per_unit(&panel, &ctrl, &cfg), Err(Error::UnknownUnit(_))));
        let controls_only = panel.select_units(&(0..panel.n_ctrl).collect::<Vec<_>>()).unwrap();
        assert!(matches!(estimate_att(&controls_only, &cfg), Err(Error::Estimand(_))));
    }

    fn small_noisy(seed: u64) -> PanelData {
        let mut spec = PanelSpec::adoption_study(0.5, 0.3);
        spec.n_times = 60;
        spec.treated_t0 = vec![40, 30, 45];
        simulate_panel(&spec, seed).unwrap().panel
    }

    fn fixed(r: usize) -> GscConfig {
        GscConfig {
            factors: FactorSelection::Fixed(r),
            ..GscConfig::default().point_only()
        }
    }

    #[test]
    fn post_shift_is_equivariant() {
        let panel = small_noisy(3);
        let base = estimate_att(&panel, &fixed(2)).unwrap();
        let mut y = panel.outcome.clone();
        for (k, &t0) in panel.t0.iter().enumerate() {
            for s in t0..panel.n_times() {
                y[(panel.n_ctrl + k, s)] += 2.5;
            }
        }
        let shifted = estimate_att(&panel.with_outcome(y).unwrap(), &fixed(2)).unwrap();
        assert!((shifted.avg_att - base.avg_att - 2.5).abs() < 1e-8);
    }

    #[test]
    fn control_order_is_irrelevant() {
        let panel = small_noisy(4);
        let n = panel.n_units();
        let mut order: Vec<usize> = (0..panel.n_ctrl).rev().collect();
        order.swap(3, 11);
        order.extend(panel.n_ctrl..n);
        let permuted = panel.select_units(&order).unwrap();
        let a = estimate_att(&panel, &fixed(2)).unwrap();
        let b = estimate_att(&permuted, &fixed(2)).unwrap();
        assert!((a.avg_att - b.avg_att).abs() < 1e-8);
    }

    #[test]
    fn single_treated_unit_matches_full_estimate() {
        let panel = small_noisy(5);
        let keep: Vec<usize> = (0..=panel.n_ctrl).collect();
        let one = panel.select_units(&keep).unwrap();
        let unit = one.treated_set()[0].clone();
        let cfg = GscConfig {
            factors: FactorSelection::Auto { max: 3 },
            ..GscConfig::default().point_only()
        };
        assert_eq!(estimate_per_unit(&one, &unit, &cfg).unwrap(), estimate_att(&one, &cfg).unwrap());
    }

    #[test]
    fn bootstrap_is_deterministic_and_coherent() {
        let panel = small_noisy(6);
        let cfg = GscConfig {
            factors: FactorSelection::Fixed(2),
            bootstrap: Some(BootstrapConfig {
                reps: 200,
                ..BootstrapConfig::default()
            }),
            seed: 9,
            ..GscConfig::default()
        };
        let a = estimate_att(&panel, &cfg).unwrap().inference.unwrap();
        let seq = GscConfig {
            execution: Execution::Sequential,
            ..cfg.clone()
        };
        let b = estimate_att(&panel, &seq).unwrap().inference.unwrap();
        assert_eq!(a, b);
        assert!(a.ci_lower <= a.ci_upper && (0.0..=1.0).contains(&a.p_value));
        assert_eq!(a.beta.len(), 3);
        assert_eq!(a.draws.len() + a.dropped, 200);
    }

    #[test]
    fn bootstrap_on_noiseless_null_is_degenerate() {
        let panel = noiseless(0.0);
        let cfg = GscConfig {
            bootstrap: Some(BootstrapConfig {
                reps: 200,
                ..BootstrapConfig::default()
            }),
            ..exact_config()
        };
        let inf = estimate_att(&panel, &cfg).unwrap().inference.unwrap();
        assert!(inf.se <= 1e-6);
        assert!(inf.ci_lower.abs() < 1e-6 && inf.ci_upper.abs() < 1e-6);
    }
}
