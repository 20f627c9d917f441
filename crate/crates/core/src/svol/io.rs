//! Daily series files: `date,log_return`, `date,price` or `date,h`.

use std::io::{Read, Write};

use chrono::NaiveDate;

use super::{prices_to_log_returns, VolatilitySource};
use crate::dataio::MonthlySeries;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

/// What the value column of a daily file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DailyColumn {
    LogReturn,
    Price,
    LogVolatility,
}

impl DailyColumn {
    fn from_header(h: &str) -> Option<Self> {
        match h {
            "log_return" | "return" => Some(Self::LogReturn),
            "price" => Some(Self::Price),
            "h" | "h_filtered" | "h_smoothed" | "log_volatility" => Some(Self::LogVolatility),
            _ => None,
        }
    }
}

/// Parse a daily file into (column kind, dated values). Dates must be strictly increasing.
pub fn read_daily<R: Read>(reader: R) -> Result<(DailyColumn, DailySeries)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("date") {
        return Err(Error::Schema("first column must be `date`".into()));
    }
    let kind = headers
        .get(1)
        .and_then(DailyColumn::from_header)
        .ok_or_else(|| {
            Error::Schema("second column must be one of log_return, price, h".into())
        })?;
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let raw_date = rec.get(0).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|e| Error::Parse {
            row,
            message: format!("date {raw_date:?}: {e}"),
        })?;
        let raw = rec.get(1).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| Error::Parse {
            row,
            message: format!("value {raw:?} is not numeric"),
        })?;
        if dates.last().is_some_and(|&last| date <= last) {
            return Err(Error::Parse {
                row,
                message: format!("date {date} is not after the previous row"),
            });
        }
        dates.push(date);
        values.push(v);
    }
    Ok((kind, DailySeries { dates, values }))
}

/// Daily returns from a file of returns or prices; prices become
/// `scale * ln(p_t / p_{t-1})` dated at `t`.
pub fn read_returns<R: Read>(reader: R, price_scale: f64) -> Result<DailySeries> {
    let (kind, s) = read_daily(reader)?;
    match kind {
        DailyColumn::LogReturn => Ok(s),
        DailyColumn::Price => Ok(DailySeries {
            values: prices_to_log_returns(&s.values, price_scale)?,
            dates: s.dates[1.min(s.dates.len())..].to_vec(),
        }),
        DailyColumn::LogVolatility => Err(Error::Schema(
            "expected log_return or price column, found log-volatility".into(),
        )),
    }
}

/// `date,h_filtered,sigma` (or `h_smoothed`) rows.
pub fn write_daily_volatility<W: Write>(dates: &[NaiveDate], h: &[f64], source: VolatilitySource, w: W) -> Result<()> {
    let column = match source {
        VolatilitySource::Filtered => "h_filtered",
        VolatilitySource::Smoothed => "h_smoothed",
    };
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["date", column, "sigma"])?;
    for (d, v) in dates.iter().zip(h) {
        w.write_record([d.to_string(), v.to_string(), (v / 2.0).exp().to_string()])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })
}

/// `month,volatility` rows.
pub fn write_monthly<W: Write>(series: &MonthlySeries, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["month", "volatility"])?;
    for (m, v) in series.months.iter().zip(&series.values) {
        w.write_record([m.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prices_become_returns() {
        let csv = "date,price\n2020-01-01,1.0\n2020-01-02,2.0\n2020-01-03,1.0\n";
        let s = read_returns(csv.as_bytes(), 100.0).unwrap();
        assert_eq!(s.dates.len(), 2);
        assert!((s.values[0] - 100.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(s.dates[0].to_string(), "2020-01-02");
    }

    #[test]
    fn rejects_bad_rows() {
        let csv = "date,log_return\n2020-01-02,0.1\n2020-01-01,0.2\n";
        assert!(matches!(read_returns(csv.as_bytes(), 1.0), Err(Error::Parse { row: 3, .. })));
        let csv = "day,log_return\n";
        assert!(matches!(read_returns(csv.as_bytes(), 1.0), Err(Error::Schema(_))));
    }
}
