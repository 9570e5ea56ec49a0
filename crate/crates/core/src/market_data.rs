//! Price ingestion, universe cleaning, gap imputation and return construction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Market {
    In,
    Us,
}

impl fmt::Display for Market {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Market::In => f.write_str("IN"),
            Market::Us => f.write_str("US"),
        }
    }
}

impl FromStr for Market {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "IN" => Ok(Market::In),
            "US" => Ok(Market::Us),
            other => Err(Error::Parameter(format!(
                "unknown market label {other:?} (expected IN or US)"
            ))),
        }
    }
}

/// Ticker to market assignment read from the companion universe file.
pub type Universe = BTreeMap<String, Market>;

/// Dates × assets closing prices. Missing cells hold NaN until imputed; the
/// `observed` mask always records what was present in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceMatrix {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub markets: Vec<Option<Market>>,
    pub prices: Array2<f64>,
    observed: Array2<bool>,
}

impl PriceMatrix {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        prices: Array2<f64>,
        observed: Array2<bool>,
    ) -> Result<Self> {
        let shape = (dates.len(), tickers.len());
        if prices.dim() != shape || observed.dim() != shape {
            return Err(Error::Parameter(format!(
                "price grid {:?} / mask {:?} do not match {} dates x {} tickers",
                prices.dim(),
                observed.dim(),
                shape.0,
                shape.1
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("dates must be strictly increasing".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &tickers {
            if !seen.insert(t) {
                return Err(Error::Parameter(format!("duplicate ticker {t}")));
            }
        }
        let markets = vec![None; tickers.len()];
        Ok(Self {
            dates,
            tickers,
            markets,
            prices,
            observed,
        })
    }

    /// Fully observed matrix from a dense grid.
    pub fn from_dense(dates: Vec<NaiveDate>, tickers: Vec<String>, prices: Array2<f64>) -> Result<Self> {
        let observed = prices.mapv(|p| p.is_finite());
        Self::new(dates, tickers, prices, observed)
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn observed(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn completeness(&self, col: usize) -> f64 {
        if self.dates.is_empty() {
            return 0.0;
        }
        let n = self.observed.column(col).iter().filter(|&&o| o).count();
        n as f64 / self.dates.len() as f64
    }

    pub fn is_complete(&self) -> bool {
        self.prices.iter().all(|p| p.is_finite() && *p > 0.0)
    }

    pub fn assign_markets(&mut self, universe: &Universe) {
        self.markets = self.tickers.iter().map(|t| universe.get(t).copied()).collect();
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            dates: self.dates.clone(),
            tickers: cols.iter().map(|&c| self.tickers[c].clone()).collect(),
            markets: cols.iter().map(|&c| self.markets[c]).collect(),
            prices: self.prices.select(Axis(1), cols),
            observed: self.observed.select(Axis(1), cols),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            dates: rows.iter().map(|&r| self.dates[r]).collect(),
            tickers: self.tickers.clone(),
            markets: self.markets.clone(),
            prices: self.prices.select(Axis(0), rows),
            observed: self.observed.select(Axis(0), rows),
        }
    }
}

/// Reads a long-format price file with header `date,ticker,close`.
///
/// Blank and `NaN` closes are recorded as missing. Tickers keep the order of
/// their first appearance in the file; dates are sorted ascending.
pub fn load_prices(path: impl AsRef<Path>) -> Result<PriceMatrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let expected = ["date", "ticker", "close"];
    if header.len() != 3 || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header date,ticker,close, found {:?}", header.iter().collect::<Vec<_>>()),
        });
    }

    let mut tickers: Vec<String> = Vec::new();
    let mut ticker_index: HashMap<String, usize> = HashMap::new();
    let mut cells: BTreeMap<(NaiveDate, usize), Option<f64>> = BTreeMap::new();
    let mut dates = BTreeSet::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT)
            .map_err(|e| parse_err(format!("bad date {:?}: {e}", &record[0])))?;
        let ticker = record[1].to_string();
        if ticker.is_empty() {
            return Err(parse_err("empty ticker".into()));
        }
        let close = match &record[2] {
            "" => None,
            s if s.eq_ignore_ascii_case("nan") => None,
            s => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| parse_err(format!("bad close {s:?}")))?;
                if !v.is_finite() || v <= 0.0 {
                    return Err(Error::Validation {
                        line,
                        message: format!("close for {ticker} on {date} must be positive, got {s}"),
                    });
                }
                Some(v)
            }
        };
        let col = *ticker_index.entry(ticker.clone()).or_insert_with(|| {
            tickers.push(ticker.clone());
            tickers.len() - 1
        });
        if cells.insert((date, col), close).is_some() {
            return Err(Error::Conflict {
                date: date.format(DATE_FORMAT).to_string(),
                ticker,
                line,
            });
        }
        dates.insert(date);
    }

    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let row_of: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut prices = Array2::from_elem((dates.len(), tickers.len()), f64::NAN);
    let mut observed = Array2::from_elem((dates.len(), tickers.len()), false);
    for ((date, col), close) in cells {
        if let Some(v) = close {
            let row = row_of[&date];
            prices[[row, col]] = v;
            observed[[row, col]] = true;
        }
    }
    PriceMatrix::new(dates, tickers, prices, observed)
}

/// Reads the `ticker,market` universe file.
pub fn load_universe(path: impl AsRef<Path>) -> Result<Universe> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() != 2 || &header[0] != "ticker" || &header[1] != "market" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header ticker,market".into(),
        });
    }
    let mut out = Universe::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let market = record[1].parse().map_err(|e: Error| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        out.insert(record[0].to_string(), market);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanReport {
    pub retained: Vec<String>,
    pub dropped: Vec<(String, f64)>,
}

/// Keeps tickers whose observed fraction is at least `min_completeness`.
pub fn clean_universe(pm: &PriceMatrix, min_completeness: f64) -> Result<(PriceMatrix, CleanReport)> {
    if !(0.0..=1.0).contains(&min_completeness) {
        return Err(Error::Parameter(format!(
            "min_completeness must lie in [0, 1], got {min_completeness}"
        )));
    }
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (col, ticker) in pm.tickers.iter().enumerate() {
        let c = pm.completeness(col);
        if c >= min_completeness {
            keep.push(col);
        } else {
            dropped.push((ticker.clone(), c));
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    let out = pm.select_columns(&keep);
    let report = CleanReport {
        retained: out.tickers.clone(),
        dropped,
    };
    Ok((out, report))
}

/// Drops dates on which some tagged market has no observed price at all.
/// Returns the aligned matrix and the number of dates removed.
pub fn align_markets(pm: &PriceMatrix) -> (PriceMatrix, usize) {
    let markets: BTreeSet<Market> = pm.markets.iter().flatten().copied().collect();
    if markets.len() < 2 {
        return (pm.clone(), 0);
    }
    let rows: Vec<usize> = (0..pm.n_dates())
        .filter(|&r| {
            markets.iter().all(|m| {
                pm.markets
                    .iter()
                    .enumerate()
                    .any(|(c, mc)| *mc == Some(*m) && pm.observed[[r, c]])
            })
        })
        .collect();
    let dropped = pm.n_dates() - rows.len();
    (pm.select_rows(&rows), dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImputeMode {
    /// Forward-fill interior and trailing gaps, back-fill leading gaps.
    #[default]
    ForwardFill,
    /// Linear interpolation between observed neighbours; edges as `ForwardFill`.
    Linear,
}

impl FromStr for ImputeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ffill" | "forward_fill" => Ok(Self::ForwardFill),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Parameter(format!("unknown imputation mode {other:?}"))),
        }
    }
}

/// Fills every unobserved cell from the observed cells of its column.
pub fn impute_missing(pm: &PriceMatrix, mode: ImputeMode) -> Result<PriceMatrix> {
    let mut out = pm.clone();
    for col in 0..pm.n_assets() {
        let obs: Vec<usize> = (0..pm.n_dates()).filter(|&r| pm.observed[[r, col]]).collect();
        let Some(&first) = obs.first() else {
            return Err(Error::NoObservations(pm.tickers[col].clone()));
        };
        let price = |r: usize| pm.prices[[r, col]];
        for r in 0..first {
            out.prices[[r, col]] = price(first);
        }
        for pair in obs.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            for r in a + 1..b {
                out.prices[[r, col]] = match mode {
                    ImputeMode::ForwardFill => price(a),
                    ImputeMode::Linear => {
                        let frac = (r - a) as f64 / (b - a) as f64;
                        price(a) + frac * (price(b) - price(a))
                    }
                };
            }
        }
        let last = *obs.last().unwrap();
        for r in last + 1..pm.n_dates() {
            out.prices[[r, col]] = price(last);
        }
    }
    Ok(out)
}

/// Dates × assets daily log returns (one fewer row than the prices).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub markets: Vec<Option<Market>>,
    pub returns: Array2<f64>,
}

impl ReturnMatrix {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, returns: Array2<f64>) -> Result<Self> {
        if returns.dim() != (dates.len(), tickers.len()) {
            return Err(Error::DimensionMismatch {
                expected: dates.len() * tickers.len(),
                got: returns.len(),
            });
        }
        let markets = vec![None; tickers.len()];
        Ok(Self {
            dates,
            tickers,
            markets,
            returns,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.returns.ncols()
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            dates: self.dates.clone(),
            tickers: cols.iter().map(|&c| self.tickers[c].clone()).collect(),
            markets: cols.iter().map(|&c| self.markets[c]).collect(),
            returns: self.returns.select(Axis(1), cols),
        }
    }

    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            dates: self.dates[range.clone()].to_vec(),
            tickers: self.tickers.clone(),
            markets: self.markets.clone(),
            returns: self.returns.slice(ndarray::s![range, ..]).to_owned(),
        }
    }

    pub fn column_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    /// Wide CSV: `date,<ticker>,<ticker>,...`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "date,{}", self.tickers.join(","))?;
        for (r, d) in self.dates.iter().enumerate() {
            write!(w, "{}", d.format(DATE_FORMAT))?;
            for v in self.returns.row(r) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn log_returns(pm: &PriceMatrix) -> Result<ReturnMatrix> {
    if let Some(((r, c), p)) = pm.prices.indexed_iter().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::Domain(format!(
            "price {p} for {} on {} is not a positive number",
            pm.tickers[c],
            pm.dates[r].format(DATE_FORMAT)
        )));
    }
    let t = pm.n_dates();
    if t < 2 {
        return Err(Error::Parameter("need at least two dates to form returns".into()));
    }
    let mut returns = Array2::zeros((t - 1, pm.n_assets()));
    for r in 0..t - 1 {
        for c in 0..pm.n_assets() {
            returns[[r, c]] = (pm.prices[[r + 1, c]] / pm.prices[[r, c]]).ln();
        }
    }
    Ok(ReturnMatrix {
        dates: pm.dates[1..].to_vec(),
        tickers: pm.tickers.clone(),
        markets: pm.markets.clone(),
        returns,
    })
}

/// Per-asset standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns whose values are all identical; they normalize to zeros.
    pub degenerate: Vec<bool>,
}

impl ColumnStats {
    pub fn of(rm: &ReturnMatrix) -> Result<Self> {
        let n = rm.n_rows();
        if n < 2 {
            return Err(Error::Parameter(format!(
                "z-scoring needs at least 2 observations per column, got {n}"
            )));
        }
        let mut mean = Vec::with_capacity(rm.n_assets());
        let mut std = Vec::with_capacity(rm.n_assets());
        let mut degenerate = Vec::with_capacity(rm.n_assets());
        for col in rm.returns.columns() {
            let m = col.sum() / n as f64;
            let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let first = col[0];
            mean.push(m);
            std.push(var.sqrt());
            degenerate.push(col.iter().all(|&x| x == first));
        }
        Ok(Self { mean, std, degenerate })
    }

    pub fn degenerate_tickers(&self, tickers: &[String]) -> Vec<String> {
        tickers
            .iter()
            .zip(&self.degenerate)
            .filter(|(_, d)| **d)
            .map(|(t, _)| t.clone())
            .collect()
    }
}

/// Z-scored returns plus the statistics used to produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedReturns {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub values: Array2<f64>,
    pub stats: ColumnStats,
}

impl NormalizedReturns {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }
}

pub fn zscore_normalize(rm: &ReturnMatrix) -> Result<NormalizedReturns> {
    let stats = ColumnStats::of(rm)?;
    apply_zscore(rm, &stats)
}

/// Standardizes `rm` with externally supplied statistics, e.g. training-period
/// moments applied to an evaluation period.
pub fn apply_zscore(rm: &ReturnMatrix, stats: &ColumnStats) -> Result<NormalizedReturns> {
    if stats.mean.len() != rm.n_assets() {
        return Err(Error::DimensionMismatch {
            expected: rm.n_assets(),
            got: stats.mean.len(),
        });
    }
    let mut values = rm.returns.clone();
    for (c, mut col) in values.columns_mut().into_iter().enumerate() {
        if stats.degenerate[c] || stats.std[c] == 0.0 {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|x| (x - stats.mean[c]) / stats.std[c]);
        }
    }
    Ok(NormalizedReturns {
        dates: rm.dates.clone(),
        tickers: rm.tickers.clone(),
        values,
        stats: stats.clone(),
    })
}
