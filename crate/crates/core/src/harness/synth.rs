//! Synthetic two-market universe with correlated blocks.
//!
//! Daily log returns follow a one-factor-per-block model
//! `r = μ + σ (√ρ f_block + √(1−ρ) ε)`. The first half of the assets trade
//! in one market and the rest in the other; blocks never straddle markets
//! when the block count is even.

use std::io::Write;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::market_data::{Market, PriceMatrix, Universe, DATE_FORMAT};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub n_days: usize,
    pub n_blocks: usize,
    pub block_correlation: f64,
    pub start: NaiveDate,
    /// Probability that any single close is missing.
    pub missing_rate: f64,
    pub seed: u64,
    /// Asset whose drift is replaced by `planted_drift`.
    pub planted: Option<usize>,
    pub planted_drift: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_assets: 24,
            n_days: 600,
            n_blocks: 6,
            block_correlation: 0.6,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            missing_rate: 0.0,
            seed: 0,
            planted: None,
            planted_drift: 0.002,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub prices: PriceMatrix,
    pub universe: Universe,
    /// The generating log returns, before any prices were blanked.
    pub returns: Array2<f64>,
    pub drift: Vec<f64>,
    pub volatility: Vec<f64>,
    pub blocks: Vec<usize>,
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

pub fn ticker_name(i: usize, n: usize) -> String {
    let half = n.div_ceil(2);
    if i < half {
        format!("IN{i:03}")
    } else {
        format!("US{:03}", i - half)
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let n = spec.n_assets;
    if n == 0 || spec.n_blocks == 0 || spec.n_blocks > n || spec.n_days < 2 {
        return Err(Error::Parameter(
            "synthetic universe needs assets, 1..=n_assets blocks and at least 2 days".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.block_correlation) || !(0.0..1.0).contains(&spec.missing_rate) {
        return Err(Error::Parameter("block correlation and missing rate must lie in [0, 1)".into()));
    }
    if spec.planted.is_some_and(|p| p >= n) {
        return Err(Error::Parameter("planted asset index out of range".into()));
    }
    let mut params = rng::substream(spec.seed, 0);
    let blocks: Vec<usize> = (0..n).map(|i| i * spec.n_blocks / n).collect();
    let mut drift: Vec<f64> = (0..n).map(|_| params.random_range(-0.0002..0.0006)).collect();
    let mut volatility: Vec<f64> = (0..n).map(|_| params.random_range(0.008..0.02)).collect();
    if let Some(p) = spec.planted {
        drift[p] = spec.planted_drift;
        volatility[p] = 0.01;
    }

    // one row of factor and idiosyncratic draws per day
    let t_prices = spec.n_days + 1;
    let (a, b) = (spec.block_correlation.sqrt(), (1.0 - spec.block_correlation).sqrt());
    let mut returns = Array2::zeros((spec.n_days, n));
    for t in 0..spec.n_days {
        let mut g = rng::substream(spec.seed, 1 + t as u64);
        let factors: Vec<f64> = (0..spec.n_blocks).map(|_| StandardNormal.sample(&mut g)).collect();
        for i in 0..n {
            let e: f64 = StandardNormal.sample(&mut g);
            returns[[t, i]] = drift[i] + volatility[i] * (a * factors[blocks[i]] + b * e);
        }
    }

    let dates = business_days(spec.start, t_prices);
    let tickers: Vec<String> = (0..n).map(|i| ticker_name(i, n)).collect();
    let mut prices = Array2::zeros((t_prices, n));
    let mut observed = Array2::from_elem((t_prices, n), true);
    let mut holes = rng::substream(spec.seed, u64::MAX);
    for i in 0..n {
        let mut log_p = (50.0 + 10.0 * i as f64).ln();
        for t in 0..t_prices {
            if t > 0 {
                log_p += returns[[t - 1, i]];
            }
            prices[[t, i]] = log_p.exp();
            if spec.missing_rate > 0.0 && holes.random::<f64>() < spec.missing_rate {
                prices[[t, i]] = f64::NAN;
                observed[[t, i]] = false;
            }
        }
    }
    let mut pm = PriceMatrix::new(dates, tickers.clone(), prices, observed)?;
    let half = n.div_ceil(2);
    let universe: Universe = tickers
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), if i < half { Market::In } else { Market::Us }))
        .collect();
    pm.assign_markets(&universe);
    Ok(SyntheticData {
        prices: pm,
        universe,
        returns,
        drift,
        volatility,
        blocks,
    })
}

/// Long-format `date,ticker,close`; missing closes are written empty.
pub fn write_prices_csv(mut w: impl Write, pm: &PriceMatrix) -> Result<()> {
    writeln!(w, "date,ticker,close")?;
    for (t, date) in pm.dates.iter().enumerate() {
        let d = date.format(DATE_FORMAT);
        for (i, ticker) in pm.tickers.iter().enumerate() {
            if pm.observed()[[t, i]] {
                writeln!(w, "{d},{ticker},{}", pm.prices[[t, i]])?;
            } else {
                writeln!(w, "{d},{ticker},")?;
            }
        }
    }
    Ok(())
}

pub fn write_universe_csv(mut w: impl Write, universe: &Universe) -> Result<()> {
    writeln!(w, "ticker,market")?;
    for (t, m) in universe {
        writeln!(w, "{t},{m}")?;
    }
    Ok(())
}
