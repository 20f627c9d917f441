use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::dataio::{MonthlySeries, YearMonth};
use crate::error::{Error, Result};

/// Monthly volatility from daily log-volatility: per month,
/// `sqrt(mean_d exp(h_d))`, the root-mean-square of `sigma_d = exp(h_d / 2)`.
pub fn aggregate_monthly(dates: &[NaiveDate], h: &[f64]) -> Result<MonthlySeries> {
    let sigma: Vec<f64> = h.iter().map(|v| (v / 2.0).exp()).collect();
    aggregate_sigma_monthly(dates, &sigma)
}

/// As [`aggregate_monthly`] but taking daily volatilities directly.
///
/// Each month is computed as `max * sqrt(mean((sigma / max)^2))` over the
/// sorted daily values, so a constant month returns its value exactly and the
/// result does not depend on day order.
pub fn aggregate_sigma_monthly(dates: &[NaiveDate], sigma: &[f64]) -> Result<MonthlySeries> {
    if dates.len() != sigma.len() {
        return Err(Error::Dimension(format!(
            "{} dates but {} values",
            dates.len(),
            sigma.len()
        )));
    }
    if let Some(v) = sigma.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidInput(format!("daily volatility {v} is not a finite non-negative number")));
    }
    let mut groups: BTreeMap<YearMonth, Vec<f64>> = BTreeMap::new();
    for (&d, &s) in dates.iter().zip(sigma) {
        groups.entry(YearMonth::from_date(d)).or_default().push(s);
    }
    let (Some(&first), Some(&last)) = (groups.keys().next(), groups.keys().next_back()) else {
        return Err(Error::InsufficientData("no daily observations".into()));
    };
    let months = YearMonth::range_inclusive(first, last);
    let mut values = Vec::with_capacity(months.len());
    for m in &months {
        let Some(days) = groups.get_mut(m) else {
            return Err(Error::EmptyMonth { month: m.to_string() });
        };
        days.sort_by(f64::total_cmp);
        let max = *days.last().unwrap();
        if max == 0.0 {
            values.push(0.0);
            continue;
        }
        let ms = days.iter().map(|s| (s / max).powi(2)).sum::<f64>() / days.len() as f64;
        values.push(max * ms.sqrt());
    }
    MonthlySeries::new(months, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn constant_month_is_exact() {
        let dates: Vec<_> = (1..=22).map(|d| day(2010, 5, d)).collect();
        for c in [0.37, 1.0, 3.3e-3, 123.456] {
            let out = aggregate_sigma_monthly(&dates, &vec![c; 22]).unwrap();
            assert_eq!(out.values, vec![c]);
        }
        let h = vec![-2.3; 22];
        let out = aggregate_monthly(&dates, &h).unwrap();
        assert_eq!(out.values[0], (-2.3f64 / 2.0).exp());
    }

    #[test]
    fn two_day_hand_value() {
        let out = aggregate_sigma_monthly(&[day(2010, 5, 3), day(2010, 5, 4)], &[3.0, 4.0]).unwrap();
        assert!((out.values[0] - 12.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn gap_month_is_error() {
        let err = aggregate_sigma_monthly(&[day(2010, 5, 3), day(2010, 7, 4)], &[1.0, 1.0]);
        assert!(matches!(err, Err(Error::EmptyMonth { month }) if month == "2010-06"));
    }

    #[test]
    fn months_split() {
        let dates = [day(2010, 1, 30), day(2010, 2, 1), day(2010, 2, 2)];
        let out = aggregate_sigma_monthly(&dates, &[2.0, 1.0, 1.0]).unwrap();
        assert_eq!(out.months.len(), 2);
        assert_eq!(out.values, vec![2.0, 1.0]);
    }

    proptest! {
        #[test]
        fn bounded_and_order_free(
            sig in proptest::collection::vec(1e-3f64..10.0, 1..25),
            rot in 0usize..25,
        ) {
            let dates: Vec<_> = (0..sig.len()).map(|d| day(2012, 3, d as u32 + 1)).collect();
            let v = aggregate_sigma_monthly(&dates, &sig).unwrap().values[0];
            let lo = sig.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sig.iter().copied().fold(0.0, f64::max);
            prop_assert!(v >= lo * (1.0 - 1e-12) && v <= hi);
            let mut shuffled = sig.clone();
            shuffled.rotate_left(rot % sig.len());
            shuffled.reverse();
            let w = aggregate_sigma_monthly(&dates, &shuffled).unwrap().values[0];
            prop_assert_eq!(v, w);
        }

        #[test]
        fn monotone_in_each_day(sig in proptest::collection::vec(1e-3f64..10.0, 2..10), k in 0usize..10, bump in 0.0f64..5.0) {
            let dates: Vec<_> = (0..sig.len()).map(|d| day(2012, 3, d as u32 + 1)).collect();
            let v = aggregate_sigma_monthly(&dates, &sig).unwrap().values[0];
            let mut up = sig.clone();
            up[k % sig.len()] += bump;
            let w = aggregate_sigma_monthly(&dates, &up).unwrap().values[0];
            prop_assert!(w >= v * (1.0 - 1e-14));
        }
    }
}
