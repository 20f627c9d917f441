//! Panel ingestion, covariate construction and treatment validation.
//!
//! Panels are read from long-format CSV (`unit,time,outcome,treatment,<covariates>`),
//! must be balanced over a contiguous monthly calendar, and are stored with
//! never-treated (control) units first and treated units last.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calendar month, rendered as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Domain(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    pub fn from_date(date: chrono::NaiveDate) -> Self {
        use chrono::Datelike;
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Months from `self` to `later` (negative if `later` precedes `self`).
    pub fn months_until(self, later: Self) -> i64 {
        (later.year as i64 - self.year as i64) * 12 + later.month as i64 - self.month as i64
    }

    /// Consecutive months from `start` to `end` inclusive.
    pub fn range_inclusive(start: Self, end: Self) -> Vec<Self> {
        let mut out = Vec::new();
        let mut cur = start;
        while cur <= end {
            out.push(cur);
            cur = cur.succ();
        }
        out
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = String;

    /// Accepts `YYYY-MM`, `YYYY-M`, `YYYY/MM` and `YYYY-MM-DD` (day ignored).
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let mut parts = s.split(['-', '/']);
        let year = parts.next().and_then(|p| p.parse::<i32>().ok());
        let month = parts.next().and_then(|p| p.parse::<u32>().ok());
        let rest: Vec<&str> = parts.collect();
        match (year, month) {
            (Some(y), Some(m)) if (1..=12).contains(&m) && rest.len() <= 1 => {
                if let Some(day) = rest.first() {
                    if day.parse::<u32>().is_err() {
                        return Err(format!("unparsable time {s:?}"));
                    }
                }
                Ok(YearMonth { year: y, month: m })
            }
            _ => Err(format!("unparsable time {s:?}; expected YYYY-MM")),
        }
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Column-name mapping for long-format panel files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    /// Covariate holding the exchange-rate regime code; validated to lie in {0, 1, 2}.
    #[serde(default)]
    pub regime: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            treatment: "treatment".into(),
            covariates: Vec::new(),
            regime: None,
        }
    }
}

impl Schema {
    pub fn with_covariates<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.covariates = names.into_iter().map(Into::into).collect();
        self
    }
}

/// Exchange-rate regime code carried as a single numeric covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeCode {
    OtherManaged = 0,
    SoftPeg = 1,
    Floating = 2,
}

impl RegimeCode {
    pub fn from_value(v: f64) -> Option<Self> {
        match v {
            x if x == 0.0 => Some(Self::OtherManaged),
            x if x == 1.0 => Some(Self::SoftPeg),
            x if x == 2.0 => Some(Self::Floating),
            _ => None,
        }
    }

    pub fn value(self) -> f64 {
        self as u8 as f64
    }
}

/// Balanced outcome / treatment / covariate panel over units x months.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    /// Controls first (`0..n_ctrl`), treated last.
    pub units: Vec<String>,
    pub times: Vec<YearMonth>,
    /// N x T outcome matrix.
    pub outcome: DMatrix<f64>,
    /// N x T binary treatment indicator.
    pub treatment: DMatrix<u8>,
    /// One N x T matrix per covariate.
    pub covariates: Vec<DMatrix<f64>>,
    pub covariate_names: Vec<String>,
    pub n_ctrl: usize,
    /// Pre-treatment length of each treated unit, indexed from `n_ctrl`.
    pub t0: Vec<usize>,
}

impl PanelData {
    /// Build a panel from parts in arbitrary unit order; validates shapes and
    /// treatment, then reorders units to controls-first.
    pub fn from_parts(
        units: Vec<String>,
        times: Vec<YearMonth>,
        outcome: DMatrix<f64>,
        treatment: DMatrix<u8>,
        covariates: Vec<DMatrix<f64>>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = (units.len(), times.len());
        if outcome.shape() != (n, t) || treatment.shape() != (n, t) {
            return Err(Error::Dimension(format!(
                "outcome {:?} / treatment {:?} do not match {n} units x {t} periods",
                outcome.shape(),
                treatment.shape()
            )));
        }
        if covariates.len() != covariate_names.len() {
            return Err(Error::Dimension(format!(
                "{} covariate matrices but {} names",
                covariates.len(),
                covariate_names.len()
            )));
        }
        if let Some((k, _)) = covariates
            .iter()
            .enumerate()
            .find(|(_, x)| x.shape() != (n, t))
        {
            return Err(Error::Dimension(format!(
                "covariate {} has shape {:?}, expected ({n}, {t})",
                covariate_names[k],
                covariates[k].shape()
            )));
        }
        if outcome.iter().any(|v| !v.is_finite())
            || covariates.iter().any(|x| x.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidInput("non-finite panel value".into()));
        }
        let report = validate_treatment(&treatment)?;

        let mut order: Vec<usize> = (0..n).filter(|&i| report.onsets[i].is_none()).collect();
        let n_ctrl = order.len();
        order.extend((0..n).filter(|&i| report.onsets[i].is_some()));
        let t0 = order[n_ctrl..]
            .iter()
            .map(|&i| report.onsets[i].unwrap())
            .collect();

        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(n, t, |r, c| m[(order[r], c)]);
        Ok(Self {
            units: order.iter().map(|&i| units[i].clone()).collect(),
            times,
            outcome: pick(&outcome),
            treatment: DMatrix::from_fn(n, t, |r, c| treatment[(order[r], c)]),
            covariates: covariates.iter().map(pick).collect(),
            covariate_names,
            n_ctrl,
            t0,
        })
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_treated(&self) -> usize {
        self.units.len() - self.n_ctrl
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn control_indices(&self) -> std::ops::Range<usize> {
        0..self.n_ctrl
    }

    pub fn treated_indices(&self) -> std::ops::Range<usize> {
        self.n_ctrl..self.units.len()
    }

    pub fn control_set(&self) -> &[String] {
        &self.units[..self.n_ctrl]
    }

    pub fn treated_set(&self) -> &[String] {
        &self.units[self.n_ctrl..]
    }

    pub fn unit_index(&self, name: &str) -> Option<usize> {
        self.units.iter().position(|u| u == name)
    }

    pub fn time_index(&self, ym: YearMonth) -> Option<usize> {
        self.times.iter().position(|&t| t == ym)
    }

    /// Pre-treatment length of unit `i` (full length for controls).
    pub fn pre_length(&self, i: usize) -> usize {
        if i < self.n_ctrl {
            self.n_times()
        } else {
            self.t0[i - self.n_ctrl]
        }
    }

    /// Earliest adoption period index across treated units.
    pub fn earliest_adoption(&self) -> Option<usize> {
        self.t0.iter().copied().min()
    }

    /// Covariate value `k` for unit `i` at time `t`.
    pub fn x(&self, i: usize, t: usize, k: usize) -> f64 {
        self.covariates[k][(i, t)]
    }

    /// Panel restricted to the listed units (re-sorted controls-first).
    pub fn select_units(&self, idx: &[usize]) -> Result<Self> {
        let t = self.n_times();
        let rows = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len(), t, |r, c| m[(idx[r], c)]);
        Self::from_parts(
            idx.iter().map(|&i| self.units[i].clone()).collect(),
            self.times.clone(),
            rows(&self.outcome),
            DMatrix::from_fn(idx.len(), t, |r, c| self.treatment[(idx[r], c)]),
            self.covariates.iter().map(rows).collect(),
            self.covariate_names.clone(),
        )
    }

    /// Panel restricted to the first `end` periods.
    pub fn truncate_times(&self, end: usize) -> Result<Self> {
        if end == 0 || end > self.n_times() {
            return Err(Error::Precondition(format!(
                "cannot truncate {} periods to {end}",
                self.n_times()
            )));
        }
        let n = self.n_units();
        let cols = |m: &DMatrix<f64>| m.columns(0, end).into_owned();
        Self::from_parts(
            self.units.clone(),
            self.times[..end].to_vec(),
            cols(&self.outcome),
            DMatrix::from_fn(n, end, |r, c| self.treatment[(r, c)]),
            self.covariates.iter().map(cols).collect(),
            self.covariate_names.clone(),
        )
    }

    /// Copy of the panel with treatment reassigned: each `(unit, start)` pair
    /// becomes treated from period index `start`; all other units untreated.
    pub fn with_treatment(&self, assignments: &[(usize, usize)]) -> Result<Self> {
        let (n, t) = (self.n_units(), self.n_times());
        let mut d = DMatrix::<u8>::zeros(n, t);
        for &(i, start) in assignments {
            if i >= n || start >= t {
                return Err(Error::Precondition(format!(
                    "treatment assignment ({i}, {start}) outside {n} x {t} panel"
                )));
            }
            for c in start..t {
                d[(i, c)] = 1;
            }
        }
        Self::from_parts(
            self.units.clone(),
            self.times.clone(),
            self.outcome.clone(),
            d,
            self.covariates.clone(),
            self.covariate_names.clone(),
        )
    }

    /// Panel keeping only the named covariates, in the given order.
    pub fn select_covariates(&self, names: &[String]) -> Result<Self> {
        let mut covariates = Vec::with_capacity(names.len());
        for name in names {
            let k = self
                .covariate_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Schema(format!("unknown covariate {name:?}")))?;
            covariates.push(self.covariates[k].clone());
        }
        Ok(Self {
            covariates,
            covariate_names: names.to_vec(),
            ..self.clone()
        })
    }

    /// Copy with a replaced outcome matrix.
    pub fn with_outcome(&self, outcome: DMatrix<f64>) -> Result<Self> {
        if outcome.shape() != self.outcome.shape() {
            return Err(Error::Dimension(format!(
                "outcome {:?} vs panel {:?}",
                outcome.shape(),
                self.outcome.shape()
            )));
        }
        Ok(Self {
            outcome,
            ..self.clone()
        })
    }

    /// Check that the named covariate holds regime codes in {0, 1, 2}.
    pub fn check_regime_column(&self, name: &str) -> Result<()> {
        let k = self
            .covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("regime column {name:?} is not a covariate")))?;
        for i in 0..self.n_units() {
            for t in 0..self.n_times() {
                let v = self.covariates[k][(i, t)];
                if RegimeCode::from_value(v).is_none() {
                    return Err(Error::Schema(format!(
                        "regime code {v} for unit {} at {} is not in {{0,1,2}}",
                        self.units[i], self.times[t]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Result of a successful treatment-structure check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreatmentReport {
    /// Per row: `None` for never-treated, `Some(T0)` = number of leading zeros otherwise.
    pub onsets: Vec<Option<usize>>,
}

impl TreatmentReport {
    pub fn n_treated(&self) -> usize {
        self.onsets.iter().filter(|o| o.is_some()).count()
    }
}

/// Accepts `d` iff every row is non-decreasing and every treated row has at
/// least one untreated period. Reported times are 1-based.
pub fn validate_treatment(d: &DMatrix<u8>) -> Result<TreatmentReport> {
    let mut onsets = Vec::with_capacity(d.nrows());
    for i in 0..d.nrows() {
        let mut onset = None;
        for t in 0..d.ncols() {
            match (d[(i, t)], onset) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::TreatmentReversal { unit: i, t: t + 1 }),
                (1, None) => onset = Some(t),
                (1, Some(_)) => {}
                (v, _) => {
                    return Err(Error::Schema(format!(
                        "treatment value {v} at unit {i}, time {} is not binary",
                        t + 1
                    )))
                }
            }
        }
        if onset == Some(0) {
            return Err(Error::NoPreTreatment { unit: i });
        }
        onsets.push(onset);
    }
    Ok(TreatmentReport { onsets })
}

/// Read a long-format panel CSV.
pub fn load_panel(path: impl AsRef<Path>, schema: &Schema) -> Result<PanelData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_panel(file, schema)
}

pub fn read_panel<R: Read>(reader: R, schema: &Schema) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let (ci, ct, cy, cd) = (
        col(&schema.unit)?,
        col(&schema.time)?,
        col(&schema.outcome)?,
        col(&schema.treatment)?,
    );
    let cx: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    struct Obs {
        y: f64,
        d: u8,
        x: Vec<f64>,
    }
    let mut cells: BTreeMap<String, BTreeMap<YearMonth, Obs>> = BTreeMap::new();
    let mut months = BTreeSet::new();

    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize, what: &str| -> Result<f64> {
            field(c).parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("{what} value {:?} is not numeric", field(c)),
            })
        };
        let unit = field(ci).to_string();
        let time: YearMonth = field(ct)
            .parse()
            .map_err(|message| Error::Parse { row, message })?;
        let d = match field(cd) {
            "0" | "0.0" => 0,
            "1" | "1.0" => 1,
            other => {
                return Err(Error::Schema(format!(
                    "non-binary treatment value {other:?} at row {row}"
                )))
            }
        };
        let obs = Obs {
            y: num(cy, &schema.outcome)?,
            d,
            x: cx
                .iter()
                .zip(&schema.covariates)
                .map(|(&c, name)| num(c, name))
                .collect::<Result<_>>()?,
        };
        months.insert(time);
        if cells.entry(unit.clone()).or_default().insert(time, obs).is_some() {
            return Err(Error::DuplicateObservation {
                unit,
                time: time.to_string(),
            });
        }
    }
    let (Some(&first), Some(&last)) = (months.first(), months.last()) else {
        return Err(Error::InsufficientData("panel file has no rows".into()));
    };
    let times = YearMonth::range_inclusive(first, last);
    for (unit, obs) in &cells {
        if let Some(missing) = times.iter().find(|m| !obs.contains_key(m)) {
            return Err(Error::UnbalancedPanel {
                unit: unit.clone(),
                time: missing.to_string(),
            });
        }
    }

    let units: Vec<String> = cells.keys().cloned().collect();
    let (n, t, p) = (units.len(), times.len(), schema.covariates.len());
    let mut y = DMatrix::zeros(n, t);
    let mut d = DMatrix::zeros(n, t);
    let mut x = vec![DMatrix::zeros(n, t); p];
    for (i, obs) in cells.values().enumerate() {
        for (c, o) in obs.values().enumerate() {
            y[(i, c)] = o.y;
            d[(i, c)] = o.d;
            for k in 0..p {
                x[k][(i, c)] = o.x[k];
            }
        }
    }
    let panel = PanelData::from_parts(units, times, y, d, x, schema.covariates.clone())?;
    if let Some(regime) = &schema.regime {
        panel.check_regime_column(regime)?;
    }
    Ok(panel)
}

/// Write the panel in long format using the schema's column names.
pub fn write_panel<W: Write>(panel: &PanelData, schema: &Schema, writer: W) -> Result<()> {
    if schema.covariates.len() != panel.n_covariates() {
        return Err(Error::Schema(format!(
            "schema names {} covariates, panel has {}",
            schema.covariates.len(),
            panel.n_covariates()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.unit.clone(),
        schema.time.clone(),
        schema.outcome.clone(),
        schema.treatment.clone(),
    ];
    header.extend(schema.covariates.iter().cloned());
    w.write_record(&header)?;
    for i in 0..panel.n_units() {
        for t in 0..panel.n_times() {
            let mut rec = vec![
                panel.units[i].clone(),
                panel.times[t].to_string(),
                panel.outcome[(i, t)].to_string(),
                panel.treatment[(i, t)].to_string(),
            ];
            rec.extend(panel.covariates.iter().map(|x| x[(i, t)].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Convert a per-annum percentage rate to the equivalent compounded monthly rate.
pub fn compound_to_monthly(annual_rate: f64) -> Result<f64> {
    if !annual_rate.is_finite() || annual_rate <= -100.0 {
        return Err(Error::Domain(format!(
            "annual rate {annual_rate} must be finite and > -100"
        )));
    }
    Ok(100.0 * ((annual_rate / 100.0).ln_1p() / 12.0).exp_m1())
}

/// A monthly series keyed by calendar month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub months: Vec<YearMonth>,
    pub values: Vec<f64>,
}

impl MonthlySeries {
    pub fn new(months: Vec<YearMonth>, values: Vec<f64>) -> Result<Self> {
        if months.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} months but {} values",
                months.len(),
                values.len()
            )));
        }
        Ok(Self { months, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Subtraction order for a two-series differential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifferentialOrder {
    /// reference/base rate minus domestic rate
    #[default]
    BaseMinusDomestic,
    DomesticMinusBase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Differential {
    pub series: MonthlySeries,
    pub order: DifferentialOrder,
}

fn aligned_difference(a: &MonthlySeries, b: &MonthlySeries) -> Result<MonthlySeries> {
    if a.months != b.months {
        let sa: BTreeSet<_> = a.months.iter().collect();
        let sb: BTreeSet<_> = b.months.iter().collect();
        let mut missing: Vec<String> = sa
            .symmetric_difference(&sb)
            .map(|m| m.to_string())
            .collect();
        if missing.is_empty() {
            missing.push("(months out of order)".into());
        }
        return Err(Error::Alignment { missing });
    }
    MonthlySeries::new(
        a.months.clone(),
        a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
    )
}

/// Interest-rate differential between a base (reference) rate and a domestic
/// rate, both monthly percentages on the same calendar.
pub fn compute_ird(
    base_rate: &MonthlySeries,
    domestic_rate: &MonthlySeries,
    order: DifferentialOrder,
) -> Result<Differential> {
    let series = match order {
        DifferentialOrder::BaseMinusDomestic => aligned_difference(base_rate, domestic_rate)?,
        DifferentialOrder::DomesticMinusBase => aligned_difference(domestic_rate, base_rate)?,
    };
    Ok(Differential { series, order })
}

/// Domestic inflation minus reference inflation.
pub fn compute_inflation_differential(
    domestic: &MonthlySeries,
    reference: &MonthlySeries,
) -> Result<MonthlySeries> {
    aligned_difference(domestic, reference)
}

/// Apply a reference series across every row of an N x T domestic panel.
pub fn inflation_differential_panel(
    domestic: &DMatrix<f64>,
    reference: &[f64],
) -> Result<DMatrix<f64>> {
    if reference.len() != domestic.ncols() {
        return Err(Error::Dimension(format!(
            "reference length {} vs {} panel periods",
            reference.len(),
            domestic.ncols()
        )));
    }
    Ok(DMatrix::from_fn(domestic.nrows(), domestic.ncols(), |i, t| {
        domestic[(i, t)] - reference[t]
    }))
}

/// Index of each label in `times`, for label lookups in CLI / diagnostics.
pub fn time_lookup(times: &[YearMonth]) -> HashMap<YearMonth, usize> {
    times.iter().enumerate().map(|(i, &t)| (t, i)).collect()
}
