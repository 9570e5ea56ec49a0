//! Return moments, the Sharpe objective, trading costs, constraint predicates
//! and the composite training loss.
//!
//! All quantities are in per-day units. Reports annualize separately.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::market_data::ReturnMatrix;

/// Weights at or below this magnitude are flushed to exact zero before
/// support is counted.
pub const FLUSH_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mu: Array1<f64>,
    pub cov: Array2<f64>,
    pub sigma: Array1<f64>,
}

impl Moments {
    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mu = idx.iter().map(|&i| self.mu[i]).collect();
        let sigma = idx.iter().map(|&i| self.sigma[i]).collect();
        let cov = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| self.cov[[idx[a], idx[b]]]);
        Self { mu, cov, sigma }
    }
}

/// Sample mean and covariance with `1/(T-1)` normalization.
pub fn estimate_moments(rm: &ReturnMatrix) -> Result<Moments> {
    moments_of(&rm.returns)
}

pub fn moments_of(returns: &Array2<f64>) -> Result<Moments> {
    let (t, n) = returns.dim();
    if t < 2 {
        return Err(Error::Parameter(format!("need at least 2 return rows, got {t}")));
    }
    let mut mu = Array1::zeros(n);
    for row in returns.rows() {
        mu += &row;
    }
    mu /= t as f64;
    let mut cov = Array2::zeros((n, n));
    for row in returns.rows() {
        let dev = &row - &mu;
        for i in 0..n {
            for j in i..n {
                cov[[i, j]] += dev[i] * dev[j];
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = cov[[i, j]] / (t - 1) as f64;
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    let sigma = cov.diag().mapv(|v: f64| v.max(0.0).sqrt());
    Ok(Moments { mu, cov, sigma })
}

/// Long-only, fully-invested weights over a named universe.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    pub tickers: Vec<String>,
    pub w: Vec<f64>,
}

impl PortfolioWeights {
    /// Validates nonnegativity and the budget constraint (within 1e-9).
    pub fn new(tickers: Vec<String>, w: Vec<f64>) -> Result<Self> {
        if tickers.len() != w.len() {
            return Err(Error::DimensionMismatch {
                expected: tickers.len(),
                got: w.len(),
            });
        }
        if let Some(bad) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::Domain(format!("weight {bad} is negative or non-finite")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { tickers, w })
    }

    pub fn uniform(tickers: Vec<String>) -> Self {
        let n = tickers.len();
        Self {
            tickers,
            w: vec![1.0 / n as f64; n],
        }
    }

    pub fn unit(tickers: Vec<String>, i: usize) -> Self {
        let mut w = vec![0.0; tickers.len()];
        w[i] = 1.0;
        Self { tickers, w }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.w.iter().enumerate() {
            if x > self.w[best] {
                best = i;
            }
        }
        best
    }
}

/// Objective and constraint settings shared by training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub risk_free: f64,
    pub eps: f64,
    pub transaction_cost: f64,
    /// Minimum and maximum number of held assets.
    pub k_min: usize,
    pub k_max: usize,
    /// Composite-loss coefficients: Sharpe, transaction cost, cardinality,
    /// diversity. The transaction-cost coefficient doubles as the penalty
    /// weight of the constrained objective.
    pub loss_weights: [f64; 4],
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            risk_free: 0.0,
            eps: 1e-8,
            transaction_cost: 0.0025,
            k_min: 30,
            k_max: 50,
            loss_weights: [1.0, 1.0, 0.1, 0.01],
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Parameter(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.transaction_cost >= 0.0) {
            return Err(Error::Parameter(format!(
                "transaction cost must be nonnegative, got {}",
                self.transaction_cost
            )));
        }
        if self.k_min == 0 || self.k_max < self.k_min {
            return Err(Error::Parameter(format!(
                "cardinality bounds need 0 < k_min <= k_max, got k_min={} k_max={}",
                self.k_min, self.k_max
            )));
        }
        if self.loss_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Parameter("loss weights must be nonnegative".into()));
        }
        Ok(())
    }

    /// Cardinality bounds clipped to a universe of `n` assets.
    pub fn clamp_to(&self, n: usize) -> Self {
        let mut out = self.clone();
        out.k_max = self.k_max.min(n).max(1);
        out.k_min = self.k_min.min(out.k_max).max(1);
        out
    }
}

fn check_dims(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.len() });
    }
    Ok(())
}

/// Expected return and variance of a weight vector.
pub fn portfolio_moments(w: &[f64], m: &Moments) -> Result<(f64, f64)> {
    check_dims(w, m.n_assets())?;
    let mu_p = w.iter().zip(m.mu.iter()).map(|(a, b)| a * b).sum();
    let mut var = 0.0;
    for i in 0..w.len() {
        if w[i] == 0.0 {
            continue;
        }
        for j in 0..w.len() {
            var += w[i] * w[j] * m.cov[[i, j]];
        }
    }
    Ok((mu_p, var.max(0.0)))
}

pub fn sharpe_from(mu_p: f64, var_p: f64, risk_free: f64, eps: f64) -> f64 {
    (mu_p - risk_free) / (var_p.max(0.0).sqrt() + eps)
}

pub fn sharpe(w: &[f64], m: &Moments, cfg: &ObjectiveConfig) -> Result<f64> {
    let (mu_p, var_p) = portfolio_moments(w, m)?;
    Ok(sharpe_from(mu_p, var_p, cfg.risk_free, cfg.eps))
}

/// Sum of absolute weight changes.
pub fn turnover(w: &[f64], w_prev: &[f64]) -> Result<f64> {
    check_dims(w, w_prev.len())?;
    Ok(w.iter().zip(w_prev).map(|(a, b)| (a - b).abs()).sum())
}

pub fn transaction_cost(w: &[f64], w_prev: &[f64], rate: f64) -> Result<f64> {
    Ok(rate * turnover(w, w_prev)?)
}

/// Number of strictly positive weights.
pub fn cardinality(w: &[f64]) -> usize {
    w.iter().filter(|&&x| x > 0.0).count()
}

pub fn flush_small(w: &mut [f64]) {
    for x in w.iter_mut() {
        if x.abs() <= FLUSH_EPSILON {
            *x = 0.0;
        }
    }
}

/// Squared shortfall or excess of the support size against `[k_min, k_max]`.
pub fn cardinality_penalty(w: &[f64], k_min: usize, k_max: usize) -> f64 {
    let k = cardinality(w) as f64;
    let under = (k_min as f64 - k).max(0.0);
    let over = (k - k_max as f64).max(0.0);
    under * under + over * over
}

/// Herfindahl concentration `Σ w²`.
pub fn diversity_penalty(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub sharpe: f64,
    pub transaction_cost: f64,
    pub cardinality_penalty: f64,
    pub diversity_penalty: f64,
}

pub fn composite_loss(w: &[f64], w_prev: &[f64], m: &Moments, cfg: &ObjectiveConfig) -> Result<LossBreakdown> {
    let s = sharpe(w, m, cfg)?;
    let c = transaction_cost(w, w_prev, cfg.transaction_cost)?;
    let card = cardinality_penalty(w, cfg.k_min, cfg.k_max);
    let div = diversity_penalty(w);
    let [w1, w2, w3, w4] = cfg.loss_weights;
    Ok(LossBreakdown {
        total: -w1 * s + w2 * c + w3 * card + w4 * div,
        sharpe: s,
        transaction_cost: c,
        cardinality_penalty: card,
        diversity_penalty: div,
    })
}

/// Gradient of the Sharpe ratio with respect to the weights.
pub fn sharpe_gradient(w: &[f64], m: &Moments, cfg: &ObjectiveConfig) -> Result<Vec<f64>> {
    let (mu_p, var_p) = portfolio_moments(w, m)?;
    let sd = var_p.sqrt();
    let denom = sd + cfg.eps;
    let n = w.len();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let sigma_w: f64 = (0..n).map(|j| m.cov[[i, j]] * w[j]).sum();
        let dsd = if sd > 0.0 { sigma_w / sd } else { 0.0 };
        grad[i] = m.mu[i] / denom - (mu_p - cfg.risk_free) * dsd / (denom * denom);
    }
    Ok(grad)
}

/// Gradient of the composite loss with respect to the weights. The
/// cardinality term is piecewise constant and contributes nothing; the
/// transaction-cost term uses the sign subgradient (zero where unchanged).
pub fn composite_loss_gradient(w: &[f64], w_prev: &[f64], m: &Moments, cfg: &ObjectiveConfig) -> Result<Vec<f64>> {
    check_dims(w_prev, w.len())?;
    let gs = sharpe_gradient(w, m, cfg)?;
    let [w1, w2, _, w4] = cfg.loss_weights;
    Ok(gs
        .iter()
        .zip(w.iter().zip(w_prev))
        .map(|(g, (a, b))| {
            let sign = if a > b {
                1.0
            } else if a < b {
                -1.0
            } else {
                0.0
            };
            -w1 * g + w2 * cfg.transaction_cost * sign + w4 * 2.0 * a
        })
        .collect())
}
