//! Placebo tests, pre-treatment equivalence testing and factor export.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use crate::dataio::{PanelData, YearMonth};
use crate::error::{Error, Result};
use crate::factor::FactorModel;
use crate::gsc::{estimate_att, AttResult, GscConfig};
use crate::par::map_indexed;

/// Default in-time placebo shift before the earliest adoption.
pub const DEFAULT_PLACEBO_SHIFT: usize = 12;
/// Default equivalence margin as a multiple of the residualized outcome sd.
pub const DEFAULT_MARGIN_FACTOR: f64 = 0.36;

/// Period `DEFAULT_PLACEBO_SHIFT` months before the earliest adoption.
pub fn default_placebo_start(panel: &PanelData) -> Result<YearMonth> {
    let earliest = panel
        .earliest_adoption()
        .ok_or_else(|| Error::Estimand("panel has no treated units".into()))?;
    if earliest <= DEFAULT_PLACEBO_SHIFT {
        return Err(Error::Precondition(format!(
            "earliest adoption at period {} leaves no room for a {DEFAULT_PLACEBO_SHIFT}-period shift",
            earliest + 1
        )));
    }
    Ok(panel.times[earliest - DEFAULT_PLACEBO_SHIFT])
}

/// Pretend every treated unit adopted at `placebo_start`, using only periods
/// before the earliest true adoption.
pub fn in_time_placebo(panel: &PanelData, placebo_start: YearMonth, config: &GscConfig) -> Result<AttResult> {
    let earliest = panel
        .earliest_adoption()
        .ok_or_else(|| Error::Estimand("panel has no treated units".into()))?;
    let start = panel
        .time_index(placebo_start)
        .ok_or_else(|| Error::Precondition(format!("placebo start {placebo_start} is outside the panel")))?;
    if start >= earliest {
        return Err(Error::Precondition(format!(
            "placebo start {placebo_start} is not before the earliest adoption {}",
            panel.times[earliest]
        )));
    }
    // treatment is all zero before the earliest adoption, so truncation keeps
    // the unit order and the treated rows stay at the end
    let truncated = panel.truncate_times(earliest)?;
    let assignments: Vec<(usize, usize)> = panel.treated_indices().map(|i| (i, start)).collect();
    estimate_att(&truncated.with_treatment(&assignments)?, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboEntry {
    pub unit: String,
    pub adoption: YearMonth,
    /// `None` when the run failed.
    pub placebo_att: Option<f64>,
    pub selected_r: Option<usize>,
    /// `placebo_att >= true_att`; `None` marks a not-applicable run.
    pub indicator: Option<bool>,
    pub note: Option<String>,
}

impl PlaceboEntry {
    /// Entry for a completed run; runs selecting no factors are not applicable.
    pub fn from_run(unit: String, adoption: YearMonth, placebo_att: f64, selected_r: usize, true_att: f64) -> Self {
        let applicable = selected_r > 0;
        Self {
            unit,
            adoption,
            placebo_att: Some(placebo_att),
            selected_r: Some(selected_r),
            indicator: applicable.then_some(placebo_att >= true_att),
            note: (!applicable).then(|| "r = 0 selected; not applicable".to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateSummary {
    pub adoption: YearMonth,
    pub applicable: usize,
    pub at_least_true: usize,
    pub empirical_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboReport {
    pub true_att: f64,
    pub entries: Vec<PlaceboEntry>,
    /// `(unit, adoption)` of entries left out of the denominator.
    pub excluded: Vec<(String, YearMonth)>,
    /// Pooled share over applicable entries; `None` when there are none.
    pub empirical_p: Option<f64>,
    pub per_date: Vec<DateSummary>,
    pub notices: Vec<String>,
}

fn share(entries: &[&PlaceboEntry]) -> (usize, usize, Option<f64>) {
    let flags: Vec<bool> = entries.iter().filter_map(|e| e.indicator).collect();
    let hits = flags.iter().filter(|&&b| b).count();
    let p = (!flags.is_empty()).then(|| hits as f64 / flags.len() as f64);
    (flags.len(), hits, p)
}

impl PlaceboReport {
    pub fn assemble(true_att: f64, entries: Vec<PlaceboEntry>) -> Self {
        let excluded = entries
            .iter()
            .filter(|e| e.indicator.is_none())
            .map(|e| (e.unit.clone(), e.adoption))
            .collect();
        let mut dates: Vec<YearMonth> = entries.iter().map(|e| e.adoption).collect();
        dates.sort();
        dates.dedup();
        let per_date = dates
            .into_iter()
            .map(|adoption| {
                let group: Vec<&PlaceboEntry> = entries.iter().filter(|e| e.adoption == adoption).collect();
                let (applicable, at_least_true, empirical_p) = share(&group);
                DateSummary {
                    adoption,
                    applicable,
                    at_least_true,
                    empirical_p,
                }
            })
            .collect();
        let (_, _, empirical_p) = share(&entries.iter().collect::<Vec<_>>());
        let mut notices = Vec::new();
        if empirical_p.is_none() {
            notices.push("no applicable placebo runs; empirical p-value undefined".to_string());
        }
        Self {
            true_att,
            entries,
            excluded,
            empirical_p,
            per_date,
            notices,
        }
    }
}

/// Assign treatment, one control at a time, at each adoption date, with the
/// real treated units dropped from the panel.
pub fn in_space_placebo(
    panel: &PanelData,
    true_att: f64,
    adoption_dates: &[YearMonth],
    config: &GscConfig,
) -> Result<PlaceboReport> {
    let controls: Vec<usize> = panel.control_indices().collect();
    let pool = panel.select_units(&controls)?;
    let mut starts = Vec::with_capacity(adoption_dates.len());
    for &d in adoption_dates {
        let s = pool
            .time_index(d)
            .ok_or_else(|| Error::Precondition(format!("adoption date {d} is outside the panel")))?;
        if s == 0 {
            return Err(Error::Precondition(format!("adoption date {d} leaves no pre-treatment period")));
        }
        starts.push(s);
    }
    let run_config = config.clone().point_only();
    let n_dates = starts.len();
    let entries = map_indexed(pool.n_units() * n_dates, config.execution, |job| {
        let (i, k) = (job / n_dates, job % n_dates);
        let unit = pool.units[i].clone();
        let adoption = adoption_dates[k];
        let run = pool
            .with_treatment(&[(i, starts[k])])
            .and_then(|p| estimate_att(&p, &run_config));
        match run {
            Ok(res) => PlaceboEntry::from_run(unit, adoption, res.avg_att, res.model.r, true_att),
            Err(e) => PlaceboEntry {
                unit,
                adoption,
                placebo_att: None,
                selected_r: None,
                indicator: None,
                note: Some(format!("run failed: {e}")),
            },
        }
    });
    Ok(PlaceboReport::assemble(true_att, entries))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivalenceVerdict {
    EquivalenceShown,
    Inconclusive,
}

impl std::fmt::Display for EquivalenceVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EquivalenceShown => "equivalence shown",
            Self::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalencePeriod {
    pub event_time: i64,
    pub att: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceResult {
    pub margin: f64,
    pub periods: Vec<EquivalencePeriod>,
    pub overall: bool,
    pub verdict: EquivalenceVerdict,
}

/// Per-period check `[lo, hi] within [-margin, margin]` on `(event_time, att, lo, hi)`.
pub fn equivalence_from_intervals(intervals: &[(i64, f64, f64, f64)], margin: f64) -> EquivalenceResult {
    let periods: Vec<EquivalencePeriod> = intervals
        .iter()
        .map(|&(event_time, att, ci_lower, ci_upper)| EquivalencePeriod {
            event_time,
            att,
            ci_lower,
            ci_upper,
            pass: ci_lower >= -margin && ci_upper <= margin,
        })
        .collect();
    let overall = periods.iter().all(|p| p.pass);
    EquivalenceResult {
        margin,
        periods,
        overall,
        verdict: if overall {
            EquivalenceVerdict::EquivalenceShown
        } else {
            EquivalenceVerdict::Inconclusive
        },
    }
}

/// Equivalence test on the pre-treatment ATT path. The default margin is
/// `DEFAULT_MARGIN_FACTOR` times the residualized outcome sd.
pub fn equivalence_test(att: &AttResult, margin: Option<f64>) -> Result<EquivalenceResult> {
    let inference = att
        .inference
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("equivalence test needs bootstrap intervals".into()))?;
    let margin = margin.unwrap_or(DEFAULT_MARGIN_FACTOR * att.residualized_sd);
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidInput(format!("equivalence margin {margin} must be non-negative")));
    }
    let intervals: Vec<(i64, f64, f64, f64)> = att
        .att_path
        .iter()
        .zip(&inference.path)
        .filter(|(e, _)| e.event_time < 0)
        .map(|(e, ci)| (e.event_time, e.att, ci.ci_lower, ci.ci_upper))
        .collect();
    if intervals.is_empty() {
        return Err(Error::InvalidInput("no pre-treatment intervals".into()));
    }
    Ok(equivalence_from_intervals(&intervals, margin))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitRole {
    Control,
    Treated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorExport {
    pub times: Vec<YearMonth>,
    /// T x r.
    pub factors: DMatrix<f64>,
    pub units: Vec<String>,
    pub roles: Vec<UnitRole>,
    /// N x r.
    pub loadings: DMatrix<f64>,
    pub alpha: Vec<f64>,
    /// Correlation of each loading column with the unit fixed effects.
    pub alpha_correlation: Vec<f64>,
}

/// Factor and loading tables of a fitted model; rows of `model.loadings`
/// past `n_estimation` are labelled treated.
pub fn export_factors(model: &FactorModel, units: &[String], times: &[YearMonth]) -> Result<FactorExport> {
    if model.r == 0 {
        return Err(Error::EmptyExport);
    }
    let n = model.loadings.nrows();
    if units.len() != n || model.alpha.len() != n || times.len() != model.factors.nrows() {
        return Err(Error::Dimension(format!(
            "{} unit labels / {} alphas / {} periods for {n} x {} loadings and {} factor rows",
            units.len(),
            model.alpha.len(),
            times.len(),
            model.r,
            model.factors.nrows()
        )));
    }
    let alpha_correlation = (0..model.r)
        .map(|k| {
            let col: Vec<f64> = model.loadings.column(k).iter().copied().collect();
            let cov = (&col).covariance(&model.alpha);
            cov / ((&col).std_dev() * (&model.alpha).std_dev())
        })
        .collect();
    Ok(FactorExport {
        times: times.to_vec(),
        factors: model.factors.clone(),
        units: units.to_vec(),
        roles: (0..n)
            .map(|i| if i < model.n_estimation { UnitRole::Control } else { UnitRole::Treated })
            .collect(),
        loadings: model.loadings.clone(),
        alpha: model.alpha.clone(),
        alpha_correlation,
    })
}
