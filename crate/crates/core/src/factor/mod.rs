//! Interactive fixed effects on the control pool.
//!
//! ```text
//! Y_it = X_it' beta + alpha_i + xi_t + lambda_i' f_t + e_it
//! ```
//!
//! [`fit_twoway`] is the `r = 0` special case solved by within-transformed
//! least squares. [`fit_ife`] alternates between a least-squares `beta` step
//! given the factor term and a principal-components step given `beta`.
//! [`cross_validate`] picks `r` by leave-one-period-out prediction error on
//! treated pre-treatment data.

mod cv;
pub mod linalg;

pub use cv::{cross_validate, CvOptions, CvRow, CvTable};
pub(crate) use cv::treated_pre_system;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::PanelData;
use crate::error::{Error, Result};
use linalg::{leading_factors, subspace_change, twoway_effects, within};

/// Outcome and covariates for a set of estimation units (usually the controls).
#[derive(Debug, Clone, PartialEq)]
pub struct PanelBlock {
    pub y: DMatrix<f64>,
    pub x: Vec<DMatrix<f64>>,
    pub names: Vec<String>,
}

impl PanelBlock {
    pub fn new(y: DMatrix<f64>, x: Vec<DMatrix<f64>>, names: Vec<String>) -> Result<Self> {
        if x.len() != names.len() || x.iter().any(|m| m.shape() != y.shape()) {
            return Err(Error::Dimension("covariates must match outcome shape and names".into()));
        }
        Ok(Self { y, x, names })
    }

    /// The never-treated rows of a panel.
    pub fn controls(panel: &PanelData) -> Self {
        let rows = |m: &DMatrix<f64>| m.rows(0, panel.n_ctrl).into_owned();
        Self {
            y: rows(&panel.outcome),
            x: panel.covariates.iter().map(rows).collect(),
            names: panel.covariate_names.clone(),
        }
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.y.ncols()
    }

    fn x_beta(&self, beta: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.y.nrows(), self.y.ncols());
        for (x, b) in self.x.iter().zip(beta) {
            out += x * *b;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub beta: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// T x r latent factors, `F'F / T = I`.
    pub factors: DMatrix<f64>,
    /// N x r loadings. Rows `0..n_estimation` come from the fit; any further
    /// rows are projected (treated) units.
    pub loadings: DMatrix<f64>,
    /// Unit fixed effects (zero mean over estimation units).
    pub alpha: Vec<f64>,
    /// Time fixed effects, including the grand mean.
    pub xi: Vec<f64>,
    pub r: usize,
    pub sigma2: f64,
    pub rss: f64,
    pub n_estimation: usize,
    pub iterations: usize,
    /// Residual sum of squares after each iteration.
    pub objective_trace: Vec<f64>,
}

impl FactorModel {
    /// Systematic part `X'beta + alpha_i + xi_t + lambda_i'f_t` for unit row
    /// `i` of the model given that unit's covariates at `t`.
    pub fn systematic(&self, i: usize, t: usize, x_it: impl IntoIterator<Item = f64>) -> f64 {
        let xb: f64 = x_it.into_iter().zip(&self.beta).map(|(x, b)| x * b).sum();
        let lf: f64 = (0..self.r)
            .map(|k| self.loadings[(i, k)] * self.factors[(t, k)])
            .sum();
        xb + self.alpha[i] + self.xi[t] + lf
    }

    /// Degrees of freedom used by the fit on an N x T block with p covariates.
    pub fn dof(&self, n: usize, t: usize) -> usize {
        let r = self.r;
        r * (n + t) - r * r + self.beta.len() + n + t - 1
    }

    /// Estimation-unit loading block.
    pub fn estimation_loadings(&self) -> DMatrix<f64> {
        self.loadings.rows(0, self.n_estimation).into_owned()
    }
}

/// Starting point for the alternating iterations.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum IfeInit {
    /// Principal components of the two-way fixed effects residual.
    #[default]
    TwoWay,
    /// Explicit T x r factor guess; only its column space matters.
    Factors(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfeOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: IfeInit,
}

impl Default for IfeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 2000,
            init: IfeInit::TwoWay,
        }
    }
}

/// Within-transformed covariates with their Gram matrix, checked for collinearity.
struct Design {
    xw: Vec<DMatrix<f64>>,
    gram: DMatrix<f64>,
}

impl Design {
    fn new(block: &PanelBlock) -> Result<Self> {
        let xw: Vec<DMatrix<f64>> = block.x.iter().map(within).collect();
        let p = xw.len();
        let gram = DMatrix::from_fn(p, p, |a, b| linalg::dot(&xw[a], &xw[b]));
        // sequential Gram-Schmidt on the Gram matrix to name dependent columns
        let mut collinear = Vec::new();
        let mut basis: Vec<usize> = Vec::new();
        for k in 0..p {
            let norm2 = gram[(k, k)];
            let resid = if basis.is_empty() {
                norm2
            } else {
                let g = DMatrix::from_fn(basis.len(), basis.len(), |a, b| gram[(basis[a], basis[b])]);
                let c = DVector::from_fn(basis.len(), |a, _| gram[(basis[a], k)]);
                match linalg::solve_spd(&g, &c) {
                    Some(coef) => norm2 - c.dot(&coef),
                    None => 0.0,
                }
            };
            let raw = linalg::dot(&block.x[k], &block.x[k]).max(f64::MIN_POSITIVE);
            if norm2 <= 1e-20 * raw || resid <= 1e-10 * norm2 {
                collinear.push(block.names[k].clone());
            } else {
                basis.push(k);
            }
        }
        if !collinear.is_empty() {
            return Err(Error::RankDeficient { columns: collinear });
        }
        Ok(Self { xw, gram })
    }

    /// beta from within-transformed target `yw`.
    fn beta(&self, yw: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = self.xw.len();
        if p == 0 {
            return Ok(Vec::new());
        }
        let rhs = DVector::from_fn(p, |k, _| linalg::dot(&self.xw[k], yw));
        linalg::solve_spd(&self.gram, &rhs)
            .map(|b| b.iter().copied().collect())
            .ok_or_else(|| Error::Singular("covariate Gram matrix".into()))
    }

    fn xw_beta(&self, beta: &[f64], shape: (usize, usize)) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(shape.0, shape.1);
        for (x, b) in self.xw.iter().zip(beta) {
            out += x * *b;
        }
        out
    }
}

/// Two-way fixed effects regression (no latent factors).
pub fn fit_twoway(block: &PanelBlock) -> Result<FactorModel> {
    let design = Design::new(block)?;
    let beta = design.beta(&within(&block.y))?;
    finish(block, beta, DMatrix::zeros(block.n_times(), 0), DMatrix::zeros(block.n_units(), 0), 0, Vec::new())
}

/// Interactive fixed effects with `r` factors.
pub fn fit_ife(block: &PanelBlock, r: usize, opts: &IfeOptions) -> Result<FactorModel> {
    let (n, t) = (block.n_units(), block.n_times());
    if r + 1 > n.min(t) {
        return Err(Error::Precondition(format!(
            "r = {r} exceeds min(N, T) - 1 = {}",
            n.min(t).saturating_sub(1)
        )));
    }
    if r == 0 {
        return fit_twoway(block);
    }
    let design = Design::new(block)?;
    let yw = within(&block.y);
    let beta0 = design.beta(&yw)?;
    let mut resid = &yw - design.xw_beta(&beta0, (n, t));

    let (mut f, mut lambda) = match &opts.init {
        IfeInit::TwoWay => leading_factors(&resid, r),
        IfeInit::Factors(f0) => {
            if f0.shape() != (t, r) {
                return Err(Error::Dimension(format!(
                    "initial factors {:?}, expected ({t}, {r})",
                    f0.shape()
                )));
            }
            let coef = linalg::least_squares(f0, &resid.transpose())
                .ok_or_else(|| Error::Singular("initial factor guess".into()))?;
            let fit = f0 * coef;
            leading_factors(&within(&fit.transpose()), r)
        }
    };
    let mut beta = beta0;
    let mut trace = Vec::new();
    let mut changes = Vec::new();

    if design.xw.is_empty() {
        // no covariates: a single principal-components step is the optimum
        let common = &lambda * f.transpose();
        trace.push((&resid - &common).norm_squared());
        return finish(block, beta, f, lambda, 1, trace);
    }

    for iter in 1..=opts.max_iter {
        let common = &lambda * f.transpose();
        let new_beta = design.beta(&(&yw - within(&common)))?;
        resid = &yw - design.xw_beta(&new_beta, (n, t));
        let (new_f, new_lambda) = leading_factors(&resid, r);
        trace.push((&resid - &new_lambda * new_f.transpose()).norm_squared());

        let db: f64 = new_beta
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let bnorm = beta.iter().map(|b| b * b).sum::<f64>().sqrt().max(1.0);
        let beta_change = db / bnorm;
        let factor_change = subspace_change(&f, &new_f);
        changes.push(beta_change.max(factor_change));

        beta = new_beta;
        f = new_f;
        lambda = new_lambda;
        if beta_change < opts.tol && factor_change < opts.tol {
            return finish(block, beta, f, lambda, iter, trace);
        }
    }
    let tail = changes.len().saturating_sub(10);
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        trace: changes[tail..].to_vec(),
    })
}

fn finish(
    block: &PanelBlock,
    beta: Vec<f64>,
    factors: DMatrix<f64>,
    loadings: DMatrix<f64>,
    iterations: usize,
    objective_trace: Vec<f64>,
) -> Result<FactorModel> {
    let (n, t) = (block.n_units(), block.n_times());
    let common = &loadings * factors.transpose();
    let rem = &block.y - block.x_beta(&beta) - &common;
    let (alpha, xi) = twoway_effects(&rem);
    let resid = DMatrix::from_fn(n, t, |i, j| rem[(i, j)] - alpha[i] - xi[j]);
    let rss = resid.norm_squared();
    let r = factors.ncols();
    let mut model = FactorModel {
        beta,
        covariate_names: block.names.clone(),
        factors,
        loadings,
        alpha,
        xi,
        r,
        sigma2: 0.0,
        rss,
        n_estimation: n,
        iterations,
        objective_trace,
    };
    let dof = model.dof(n, t);
    let nt = n * t;
    model.sigma2 = if dof < nt { rss / (nt - dof) as f64 } else { rss / nt as f64 };
    Ok(model)
}

/// Residual matrix `Y - X'beta - alpha - xi - Lambda F'` over the estimation block.
pub fn residuals(model: &FactorModel, block: &PanelBlock) -> DMatrix<f64> {
    let (n, t) = (block.n_units(), block.n_times());
    DMatrix::from_fn(n, t, |i, j| {
        block.y[(i, j)] - model.systematic(i, j, block.x.iter().map(|x| x[(i, j)]))
    })
}

/// Least-squares loadings: for each column `y` of `residuals` (pre-period
/// length x units), `(F'F)^-1 F'y`. Returns one row per unit.
pub fn project_loadings(f_pre: &DMatrix<f64>, residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if f_pre.nrows() != residuals.nrows() {
        return Err(Error::Dimension(format!(
            "{} factor rows vs {} residual rows",
            f_pre.nrows(),
            residuals.nrows()
        )));
    }
    if f_pre.nrows() < f_pre.ncols() {
        return Err(Error::Precondition(format!(
            "pre-treatment length {} is shorter than {} loading columns",
            f_pre.nrows(),
            f_pre.ncols()
        )));
    }
    linalg::least_squares(f_pre, residuals)
        .map(|c| c.transpose())
        .ok_or_else(|| Error::Singular("F_pre' F_pre".into()))
}
