use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{fit_ife, linalg, FactorModel, IfeOptions, PanelBlock};
use crate::dataio::PanelData;
use crate::error::{Error, Result};
use crate::par::{map_indexed, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub r: usize,
    pub sigma2: f64,
    /// BIC-type information criterion.
    pub ic: f64,
    /// Penalized residual-variance criterion.
    pub pc: f64,
    pub mspe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub rows: Vec<CvRow>,
    pub selected_r: usize,
    /// Skipped candidates and tie-breaks.
    pub notices: Vec<String>,
}

impl CvTable {
    pub fn row(&self, r: usize) -> Option<&CvRow> {
        self.rows.iter().find(|row| row.r == r)
    }

    /// Assemble a table from scored rows; `selected_r` is the smallest r
    /// attaining the minimum MSPE.
    pub fn from_rows(rows: Vec<CvRow>, mut notices: Vec<String>) -> Result<Self> {
        let mut best: Option<&CvRow> = None;
        for row in &rows {
            match best {
                Some(b) if row.mspe < b.mspe => best = Some(row),
                Some(b) if row.mspe == b.mspe && row.r != b.r => notices.push(format!(
                    "MSPE tie between r={} and r={}; keeping r={}",
                    b.r.min(row.r),
                    b.r.max(row.r),
                    b.r.min(row.r)
                )),
                None => best = Some(row),
                _ => {}
            }
        }
        let selected_r = best.ok_or(Error::NoFeasibleFactorCount)?.r;
        Ok(Self {
            rows,
            selected_r,
            notices,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CvOptions {
    pub ife: IfeOptions,
    pub execution: Execution,
}

/// Leave-one-out squared prediction errors of `resid` on the columns of `z`.
fn loo_errors(z: &DMatrix<f64>, resid: &[f64]) -> Result<Vec<f64>> {
    let n = resid.len();
    (0..n)
        .map(|s| {
            let keep: Vec<usize> = (0..n).filter(|&i| i != s).collect();
            let zs = z.select_rows(&keep);
            let ys = DMatrix::from_iterator(n - 1, 1, keep.iter().map(|&i| resid[i]));
            let coef = linalg::least_squares(&zs, &ys)
                .ok_or_else(|| Error::Singular(format!("factor design without period {s}")))?;
            let pred: f64 = (0..z.ncols()).map(|k| z[(s, k)] * coef[(k, 0)]).sum();
            Ok((resid[s] - pred).powi(2))
        })
        .collect()
}

/// Pre-treatment residual `Y - X'beta - xi` of treated unit `i` and the
/// matching design `[F_pre, 1]`.
pub(crate) fn treated_pre_system(
    panel: &PanelData,
    model: &FactorModel,
    i: usize,
    t0: usize,
) -> (DMatrix<f64>, Vec<f64>) {
    let r = model.r;
    let z = DMatrix::from_fn(t0, r + 1, |t, k| if k < r { model.factors[(t, k)] } else { 1.0 });
    let resid = (0..t0)
        .map(|t| {
            let xb: f64 = (0..panel.n_covariates())
                .map(|k| panel.x(i, t, k) * model.beta[k])
                .sum();
            panel.outcome[(i, t)] - xb - model.xi[t]
        })
        .collect();
    (z, resid)
}

fn score(panel: &PanelData, r: usize, ife: &IfeOptions) -> Result<(FactorModel, f64)> {
    let block = PanelBlock::controls(panel);
    let model = fit_ife(&block, r, ife)?;
    let mut sq = Vec::new();
    for (k, i) in panel.treated_indices().enumerate() {
        let (z, resid) = treated_pre_system(panel, &model, i, panel.t0[k]);
        sq.extend(loo_errors(&z, &resid)?);
    }
    let mspe = sq.iter().sum::<f64>() / sq.len() as f64;
    Ok((model, mspe))
}

/// Choose the number of factors by leave-one-period-out prediction error
/// over every treated unit's pre-treatment periods.
pub fn cross_validate(
    panel: &PanelData,
    r_range: RangeInclusive<usize>,
    opts: &CvOptions,
) -> Result<CvTable> {
    if panel.n_treated() == 0 {
        return Err(Error::Estimand("cross-validation needs at least one treated unit".into()));
    }
    let (n, t) = (panel.n_ctrl, panel.n_times());
    let min_pre = panel.t0.iter().copied().min().unwrap_or(0);
    let mut notices = Vec::new();
    let mut feasible = Vec::new();
    for r in r_range {
        if r + 1 > n.min(t) {
            notices.push(format!("r={r} skipped: exceeds min(N_ctrl, T) - 1"));
        } else if min_pre < r + 2 {
            notices.push(format!(
                "r={r} skipped: shortest pre-treatment period ({min_pre}) < r + 2"
            ));
        } else {
            feasible.push(r);
        }
    }
    let scored = map_indexed(feasible.len(), opts.execution, |j| {
        score(panel, feasible[j], &opts.ife)
    });

    let p = panel.n_covariates();
    let nt = (n * t) as f64;
    let mut fits = Vec::new();
    for (r, res) in feasible.iter().zip(scored) {
        match res {
            Ok((model, mspe)) => fits.push((*r, model, mspe)),
            Err(e) => notices.push(format!("r={r} skipped: {e}")),
        }
    }
    let ref_sigma2 = fits.last().map(|(_, m, _)| m.sigma2).unwrap_or(0.0);
    let rows = fits
        .into_iter()
        .map(|(r, model, mspe)| {
            let k = (r * (n + t) + p) as f64 - (r * r) as f64;
            let penalty = k * nt.ln() / nt;
            CvRow {
                r,
                sigma2: model.sigma2,
                ic: model.sigma2.ln() + penalty,
                pc: model.sigma2 + ref_sigma2 * penalty,
                mspe,
            }
        })
        .collect();
    CvTable::from_rows(rows, notices)
}
