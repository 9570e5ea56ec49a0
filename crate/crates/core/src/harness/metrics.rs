use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::portfolio::{moments_of, sharpe_from, PortfolioWeights};
use crate::snn::SpikeRaster;

/// Sharpe ratio of each trailing `window` of `daily_returns`, using sample
/// moments. Entry `i` covers observations `i .. i + window`.
pub fn rolling_sharpe(daily_returns: &[f64], window: usize, risk_free: f64, eps: f64) -> Result<Vec<f64>> {
    if window < 2 {
        return Err(Error::Parameter("rolling window must be at least 2".into()));
    }
    if daily_returns.len() < window {
        return Err(Error::Parameter(format!(
            "series of length {} is shorter than the rolling window {window}",
            daily_returns.len()
        )));
    }
    daily_returns
        .windows(window)
        .map(|w| {
            let m = moments_of(&Array2::from_shape_vec((window, 1), w.to_vec()).expect("window shape"))?;
            Ok(sharpe_from(m.mu[0], m.cov[[0, 0]], risk_free, eps))
        })
        .collect()
}

/// Largest peak-to-trough loss as a fraction of the running peak.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &e in equity {
        peak = peak.max(e);
        worst = worst.max(1.0 - e / peak);
    }
    worst
}

/// Total spikes and the fraction of silent (step, neuron) cells.
pub fn sparsity_stats(raster: &SpikeRaster) -> (usize, f64) {
    let total = raster.total_spikes();
    let cells = raster.steps() * raster.n_neurons();
    let sparsity = if cells == 0 { 1.0 } else { 1.0 - total as f64 / cells as f64 };
    (total, sparsity)
}

pub fn concentration_hhi(w: &PortfolioWeights) -> f64 {
    w.w.iter().map(|x| x * x).sum()
}

/// Performance settings used when summarizing a return series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSettings {
    pub risk_free: f64,
    pub eps: f64,
    pub annualization: f64,
}

/// Summary statistics of an equity curve and its turnover, keyed with
/// `prefix`. Everything here is a function of the two series alone, so the
/// same numbers can be recomputed from the exported CSV.
pub fn series_metrics(prefix: &str, equity: &[f64], turnover: &[f64], s: &MetricSettings) -> Result<BTreeMap<String, f64>> {
    if equity.len() < 3 {
        return Err(Error::Parameter("need at least two return days to summarize".into()));
    }
    let daily: Vec<f64> = equity.windows(2).map(|e| (e[1] / e[0]).ln()).collect();
    let m = moments_of(&Array2::from_shape_vec((daily.len(), 1), daily.clone()).expect("column shape"))?;
    let (mu, var) = (m.mu[0], m.cov[[0, 0]]);
    let daily_sharpe = sharpe_from(mu, var, s.risk_free, s.eps);
    let rebalances = turnover.iter().filter(|&&x| x > 0.0).count();
    let total_turnover: f64 = turnover.iter().sum();
    let mut out = BTreeMap::new();
    let mut put = |k: &str, v: f64| {
        out.insert(format!("{prefix}_{k}"), v);
    };
    put("cumulative_return", equity[equity.len() - 1] / equity[0] - 1.0);
    put("mean_daily_return", mu);
    put("annual_return", mu * s.annualization);
    put("annual_volatility", var.sqrt() * s.annualization.sqrt());
    put("sharpe_daily", daily_sharpe);
    put("sharpe_annualized", daily_sharpe * s.annualization.sqrt());
    put("max_drawdown", max_drawdown(equity));
    put("total_turnover", total_turnover);
    put("paid_rebalances", rebalances as f64);
    put(
        "mean_turnover_per_rebalance",
        if rebalances > 0 { total_turnover / rebalances as f64 } else { 0.0 },
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::{sharpe, ObjectiveConfig};

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[1.0, 1.1, 1.2, 1.5]), 0.0);
        assert_eq!(max_drawdown(&[1.0, 2.0, 1.0]), 0.5);
        assert_eq!(max_drawdown(&[1.0, 0.5, 2.0]), 0.5);
    }

    #[test]
    fn sparsity_examples() {
        let mut r = SpikeRaster::new(4, 3, 0.1);
        assert_eq!(sparsity_stats(&r), (0, 1.0));
        for t in 0..4 {
            for n in 0..3 {
                r.set(t, n);
            }
        }
        assert_eq!(sparsity_stats(&r), (12, 0.0));
    }

    #[test]
    fn hhi_examples() {
        let t = |n: usize| (0..n).map(|i| format!("{i:02}")).collect::<Vec<_>>();
        assert_eq!(concentration_hhi(&PortfolioWeights::unit(t(5), 2)), 1.0);
        assert!((concentration_hhi(&PortfolioWeights::uniform(t(20))) - 0.05).abs() < 1e-15);
        assert!((concentration_hhi(&PortfolioWeights::uniform(t(40))) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn rolling_sharpe_examples() {
        let eps = 1e-8;
        let flat = rolling_sharpe(&[0.001; 50], 40, 0.0, eps).unwrap();
        assert_eq!(flat.len(), 11);
        assert!(flat.iter().all(|&x| (x - 0.001 / eps).abs() / (0.001 / eps) < 1e-9));
        let alt: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        assert!(rolling_sharpe(&alt, 40, 0.0, eps).unwrap().iter().all(|x| x.abs() < 1e-12));
        assert!(rolling_sharpe(&[0.0; 39], 40, 0.0, eps).is_err());
    }

    #[test]
    fn rolling_sharpe_hand_computation() {
        let r: Vec<f64> = (0..41).map(|i| ((i * 13 % 17) as f64 - 8.0) * 1e-3).collect();
        let out = rolling_sharpe(&r, 40, 0.0, 1e-8).unwrap();
        for (start, got) in out.iter().enumerate() {
            let w = &r[start..start + 40];
            let mean = w.iter().sum::<f64>() / 40.0;
            let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 39.0;
            assert!((got - mean / (var.sqrt() + 1e-8)).abs() < 1e-12);
        }
    }

    #[test]
    fn rolling_matches_portfolio_sharpe() {
        let r: Vec<f64> = (0..45).map(|i| (i as f64 * 0.9).sin() * 0.01 + 0.0004).collect();
        let out = rolling_sharpe(&r, 40, 0.0, 1e-8).unwrap();
        let obj = ObjectiveConfig::default();
        for (s, got) in out.iter().enumerate() {
            let m = moments_of(&Array2::from_shape_vec((40, 1), r[s..s + 40].to_vec()).unwrap()).unwrap();
            assert_eq!(*got, sharpe(&[1.0], &m, &obj).unwrap());
        }
    }
}
