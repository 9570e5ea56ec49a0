use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::market_data::ReturnMatrix;
use crate::portfolio::{turnover, PortfolioWeights};

/// Outcome of holding a weight schedule over a return matrix.
///
/// `equity_curve` has one more entry than there are return days: entry 0 is
/// the starting value 1.0 and entry `t + 1` the value after day `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub dates: Vec<NaiveDate>,
    pub equity_curve: Vec<f64>,
    /// Net daily log returns, `ln(equity[t+1] / equity[t])`.
    pub daily_returns: Vec<f64>,
    pub rebalance_dates: Vec<NaiveDate>,
    /// Turnover `Σ|Δw|` charged on each day (zero off rebalance days).
    pub turnover_series: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
}

/// Runs `schedule` (sorted by date, each date present in `returns`) over
/// `returns`. Weights take effect on their date and are held until the
/// next entry. The first entry establishes the starting position without
/// cost; every later entry pays `c_tc · Σ|w_new − w_old|`.
pub fn backtest(schedule: &[(NaiveDate, PortfolioWeights)], returns: &ReturnMatrix, c_tc: f64) -> Result<BacktestResult> {
    if !(0.0..0.5).contains(&c_tc) {
        return Err(Error::Parameter(format!("transaction cost rate must lie in [0, 0.5), got {c_tc}")));
    }
    let Some((first, _)) = schedule.first() else {
        return Err(Error::Parameter("empty weight schedule".into()));
    };
    if returns.dates.first() != Some(first) {
        return Err(Error::Domain(format!(
            "schedule starts on {first} but returns start on {}",
            returns.dates.first().map_or_else(|| "(no dates)".into(), |d| d.to_string())
        )));
    }
    let mut by_row = BTreeMap::new();
    for (i, (date, w)) in schedule.iter().enumerate() {
        if i > 0 && schedule[i - 1].0 >= *date {
            return Err(Error::Domain(format!("schedule date {date} is out of order or repeated")));
        }
        let row = returns
            .dates
            .binary_search(date)
            .map_err(|_| Error::Domain(format!("schedule date {date} is not a return date")))?;
        if w.tickers != returns.tickers {
            return Err(Error::Domain(format!("weights for {date} do not match the return columns")));
        }
        by_row.insert(row, w);
    }

    let t = returns.n_rows();
    let mut equity = Vec::with_capacity(t + 1);
    equity.push(1.0);
    let mut turnover_series = vec![0.0; t];
    let mut held: &PortfolioWeights = &schedule[0].1;
    for day in 0..t {
        let mut factor = 1.0;
        if let Some(&w) = by_row.get(&day) {
            if day > 0 {
                let to = turnover(&w.w, &held.w)?;
                turnover_series[day] = to;
                factor = 1.0 - c_tc * to;
            }
            held = w;
        }
        let r: f64 = held.w.iter().zip(returns.returns.row(day)).map(|(w, r)| w * r).sum();
        equity.push(equity[day] * r.exp() * factor);
    }
    let daily_returns: Vec<f64> = equity.windows(2).map(|e| (e[1] / e[0]).ln()).collect();
    Ok(BacktestResult {
        dates: returns.dates.clone(),
        equity_curve: equity,
        daily_returns,
        rebalance_dates: schedule.iter().map(|(d, _)| *d).collect(),
        turnover_series,
        metrics: BTreeMap::new(),
    })
}

/// Rebalance rows `0, every, 2·every, …` below `n_rows`.
pub fn rebalance_rows(n_rows: usize, every: usize) -> Vec<usize> {
    (0..n_rows).step_by(every.max(1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn dates(n: usize) -> Vec<NaiveDate> {
        (0..n)
            .map(|i| NaiveDate::from_ymd_opt(2022, 3, 1).unwrap() + chrono::Days::new(i as u64))
            .collect()
    }

    fn rm(r: Array2<f64>) -> ReturnMatrix {
        let n = r.ncols();
        ReturnMatrix::new(dates(r.nrows()), (0..n).map(|i| format!("A{i}")).collect(), r).unwrap()
    }

    fn w(v: &[f64]) -> PortfolioWeights {
        PortfolioWeights::new((0..v.len()).map(|i| format!("A{i}")).collect(), v.to_vec()).unwrap()
    }

    #[test]
    fn single_asset_passes_returns_through() {
        let r = Array2::from_shape_vec((4, 1), vec![0.01, -0.02, 0.005, 0.03]).unwrap();
        let m = rm(r);
        let res = backtest(&[(m.dates[0], w(&[1.0]))], &m, 0.0025).unwrap();
        let cum: f64 = [0.01, -0.02, 0.005, 0.03].iter().sum();
        assert!((res.equity_curve[4] - cum.exp()).abs() < 1e-12);
        assert_eq!(res.equity_curve[0], 1.0);
    }

    #[test]
    fn full_switch_costs_twice_the_rate() {
        let m = rm(Array2::zeros((10, 2)));
        let sched = [(m.dates[0], w(&[1.0, 0.0])), (m.dates[5], w(&[0.0, 1.0]))];
        let res = backtest(&sched, &m, 0.0025).unwrap();
        assert!((1.0 - res.equity_curve.last().unwrap() - 0.005).abs() < 1e-15);
        assert_eq!(res.turnover_series[5], 2.0);
    }

    #[test]
    fn duplicate_assets_match_single_asset() {
        let col = [0.01, 0.0, -0.004, 0.02];
        let one = rm(Array2::from_shape_fn((4, 1), |(t, _)| col[t]));
        let two = rm(Array2::from_shape_fn((4, 2), |(t, _)| col[t]));
        let a = backtest(&[(one.dates[0], w(&[1.0]))], &one, 0.0).unwrap();
        let b = backtest(&[(two.dates[0], w(&[0.5, 0.5]))], &two, 0.0).unwrap();
        for (x, y) in a.equity_curve.iter().zip(&b.equity_curve) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn misaligned_date_is_named() {
        let m = rm(Array2::zeros((3, 1)));
        let stray = NaiveDate::from_ymd_opt(2030, 1, 1).unwrap();
        let err = backtest(&[(m.dates[0], w(&[1.0])), (stray, w(&[1.0]))], &m, 0.0).unwrap_err();
        assert!(err.to_string().contains("2030-01-01"), "{err}");
    }

    proptest! {
        #[test]
        fn costs_never_help(
            r in prop::collection::vec(-0.05f64..0.05, 30),
            a in prop::collection::vec(0.01f64..1.0, 3),
            b in prop::collection::vec(0.01f64..1.0, 3),
            c in 0.0001f64..0.01,
        ) {
            let m = rm(Array2::from_shape_vec((10, 3), r).unwrap());
            let norm = |v: &Vec<f64>| { let s: f64 = v.iter().sum(); w(&v.iter().map(|x| x / s).collect::<Vec<_>>()) };
            let sched = [(m.dates[0], norm(&a)), (m.dates[4], norm(&b))];
            let with = backtest(&sched, &m, c).unwrap();
            let without = backtest(&sched, &m, 0.0).unwrap();
            let switched = with.turnover_series[4] > 0.0;
            for t in 0..=10 {
                prop_assert!(with.equity_curve[t] <= without.equity_curve[t]);
                prop_assert!(with.equity_curve[t] > 0.0);
                if t <= 4 || !switched {
                    prop_assert_eq!(with.equity_curve[t], without.equity_curve[t]);
                } else {
                    prop_assert!(with.equity_curve[t] < without.equity_curve[t]);
                }
            }
        }
    }
}
