//! Feedforward baseline: one ReLU hidden layer and a softmax over assets,
//! trained with Adam on the negative Sharpe ratio of its own output.
//!
//! The input is the concatenation of three features per asset (mean return,
//! volatility, latest normalized return), each standardized across assets.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::market_data::NormalizedReturns;
use crate::portfolio::{moments_of, sharpe, sharpe_gradient, Moments, ObjectiveConfig, PortfolioWeights};
use crate::rng;

pub const FEATURES_PER_ASSET: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    /// Length in days of each bootstrap return window.
    pub window: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_size: 16,
            epochs: 150,
            learning_rate: 0.02,
            batch_size: 32,
            dropout_rate: 0.2,
            window: 60,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::Parameter("hidden_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Parameter(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.window < 2 {
            return Err(Error::Parameter("epochs and batch_size must be positive and window at least 2".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Parameter("learning_rate must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpParams {
    pub fn zeros(n_in: usize, hidden: usize, n_out: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, n_in)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((n_out, hidden)),
            b2: Array1::zeros(n_out),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn xavier(n_in: usize, hidden: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(n_in, hidden, n_out);
        let mut fill = |m: &mut Array2<f64>| {
            let (fan_out, fan_in) = m.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            m.mapv_inplace(|_| u.sample(rng));
        };
        fill(&mut p.w1);
        fill(&mut p.w2);
        p
    }

    pub fn n_inputs(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.w2.nrows()
    }

    fn zip_mut(&mut self, other: &Self, mut f: impl FnMut(&mut f64, f64)) {
        self.w1.zip_mut_with(&other.w1, |a, &b| f(a, b));
        self.b1.zip_mut_with(&other.b1, |a, &b| f(a, b));
        self.w2.zip_mut_with(&other.w2, |a, &b| f(a, b));
        self.b2.zip_mut_with(&other.b2, |a, &b| f(a, b));
    }
}

/// Standardizes each feature across assets. A feature that is constant
/// across assets becomes all zeros.
pub fn asset_features(mu: &[f64], sigma: &[f64], last_z: &[f64]) -> Result<Vec<f64>> {
    let n = mu.len();
    if sigma.len() != n || last_z.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if sigma.len() != n { sigma.len() } else { last_z.len() },
        });
    }
    let standardize = |v: &[f64]| -> Vec<f64> {
        let m = v.iter().sum::<f64>() / n as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        v.iter().map(|x| if sd > 0.0 { (x - m) / sd } else { 0.0 }).collect()
    };
    let cols = [standardize(mu), standardize(sigma), standardize(last_z)];
    let mut out = Vec::with_capacity(n * FEATURES_PER_ASSET);
    for i in 0..n {
        out.extend(cols.iter().map(|c| c[i]));
    }
    Ok(out)
}

struct Forward {
    pre: Array1<f64>,
    hidden: Array1<f64>,
    weights: Array1<f64>,
}

fn softmax(z: &Array1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

/// `mask` holds inverted-dropout multipliers for the hidden units.
fn forward(x: &[f64], p: &MlpParams, mask: Option<&[f64]>) -> Result<Forward> {
    if x.len() != p.n_inputs() {
        return Err(Error::DimensionMismatch {
            expected: p.n_inputs(),
            got: x.len(),
        });
    }
    let x = Array1::from(x.to_vec());
    let pre = p.w1.dot(&x) + &p.b1;
    let mut hidden = pre.mapv(|v| v.max(0.0));
    if let Some(m) = mask {
        hidden.iter_mut().zip(m).for_each(|(h, k)| *h *= k);
    }
    let logits = p.w2.dot(&hidden) + &p.b2;
    Ok(Forward {
        pre,
        hidden,
        weights: softmax(&logits),
    })
}

pub fn mlp_forward(x: &[f64], params: &MlpParams, tickers: &[String]) -> Result<PortfolioWeights> {
    if tickers.len() != params.n_outputs() {
        return Err(Error::DimensionMismatch {
            expected: params.n_outputs(),
            got: tickers.len(),
        });
    }
    let f = forward(x, params, None)?;
    Ok(PortfolioWeights {
        tickers: tickers.to_vec(),
        w: f.weights.to_vec(),
    })
}

/// Negative Sharpe of the network's output under `m`, and its gradient with
/// respect to every parameter.
pub fn loss_and_grad(
    x: &[f64],
    p: &MlpParams,
    m: &Moments,
    obj: &ObjectiveConfig,
    mask: Option<&[f64]>,
) -> Result<(f64, MlpParams)> {
    let f = forward(x, p, mask)?;
    let w = f.weights.as_slice().unwrap();
    let loss = -sharpe(w, m, obj)?;
    let g_w: Array1<f64> = sharpe_gradient(w, m, obj)?.into_iter().map(|g| -g).collect();
    let dot = g_w.dot(&f.weights);
    let g_logits = &f.weights * &(g_w - dot);
    let mut g = MlpParams::zeros(p.n_inputs(), p.w1.nrows(), p.n_outputs());
    g.b2.assign(&g_logits);
    g.w2 = outer(&g_logits, &f.hidden);
    let mut g_hidden = p.w2.t().dot(&g_logits);
    if let Some(m) = mask {
        g_hidden.iter_mut().zip(m).for_each(|(h, k)| *h *= k);
    }
    let g_pre = g_hidden * f.pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    g.w1 = outer(&g_pre, &Array1::from(x.to_vec()));
    g.b1 = g_pre;
    Ok((loss, g))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

struct Adam {
    m: MlpParams,
    v: MlpParams,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &MlpParams) -> Self {
        let z = MlpParams::zeros(p.n_inputs(), p.w1.nrows(), p.n_outputs());
        Self { m: z.clone(), v: z, t: 0 }
    }

    fn step(&mut self, p: &mut MlpParams, g: &MlpParams, lr: f64) {
        self.t += 1;
        self.m.zip_mut(g, |m, g| *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g);
        self.v.zip_mut(g, |v, g| *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g);
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let mut upd = self.m.clone();
        upd.zip_mut(&self.v, |m, v| *m = lr * (*m / c1) / ((v / c2).sqrt() + Self::EPS));
        p.zip_mut(&upd, |p, u| *p -= u);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnModel {
    pub params: MlpParams,
    pub tickers: Vec<String>,
}

impl AnnModel {
    /// Softmax weights for the given per-asset summaries.
    pub fn predict(&self, mu: &[f64], sigma: &[f64], last_z: &[f64]) -> Result<PortfolioWeights> {
        mlp_forward(&asset_features(mu, sigma, last_z)?, &self.params, &self.tickers)
    }
}

#[derive(Debug, Clone)]
pub struct AnnOutcome {
    pub model: AnnModel,
    /// Full-sample negative Sharpe after each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains on bootstrap windows of `returns` (raw log returns, rows = days).
/// `normalized` must cover the same days and assets; its rows supply the
/// latest-return feature of each window.
pub fn train_ann(
    returns: ArrayView2<'_, f64>,
    normalized: &NormalizedReturns,
    cfg: &MlpConfig,
    obj: &ObjectiveConfig,
) -> Result<AnnOutcome> {
    cfg.validate()?;
    obj.validate()?;
    let (t, n) = returns.dim();
    if normalized.values.dim() != (t, n) {
        return Err(Error::DimensionMismatch {
            expected: t * n,
            got: normalized.values.len(),
        });
    }
    if t < 2 || n == 0 {
        return Err(Error::Parameter("training needs at least 2 days and 1 asset".into()));
    }
    let window = cfg.window.min(t);
    let full = moments_of(&returns.to_owned())?;
    let full_x = asset_features(
        full.mu.as_slice().unwrap(),
        full.sigma.as_slice().unwrap(),
        &normalized.values.row(t - 1).to_vec(),
    )?;

    let mut init_rng = rng::substream(cfg.seed, 0);
    let mut params = MlpParams::xavier(n * FEATURES_PER_ASSET, cfg.hidden_size, n, &mut init_rng);
    let mut adam = Adam::new(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let keep = 1.0 - cfg.dropout_rate;

    for epoch in 0..cfg.epochs {
        let mut gen = rng::substream(cfg.seed, 1 + epoch as u64);
        let mut grad = MlpParams::zeros(params.n_inputs(), cfg.hidden_size, n);
        for _ in 0..cfg.batch_size {
            let start = gen.random_range(0..=t - window);
            let m = moments_of(&returns.slice(s![start..start + window, ..]).to_owned())?;
            let x = asset_features(
                m.mu.as_slice().unwrap(),
                m.sigma.as_slice().unwrap(),
                &normalized.values.row(start + window - 1).to_vec(),
            )?;
            let mask: Vec<f64> = (0..cfg.hidden_size)
                .map(|_| if gen.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let (loss, g) = loss_and_grad(&x, &params, &m, obj, Some(&mask))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            grad.zip_mut(&g, |a, b| *a += b / cfg.batch_size as f64);
        }
        adam.step(&mut params, &grad, cfg.learning_rate);
        let (loss, _) = loss_and_grad(&full_x, &params, &full, obj, None)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(loss);
    }
    Ok(AnnOutcome {
        model: AnnModel {
            params,
            tickers: normalized.tickers.clone(),
        },
        loss_history: history,
    })
}

pub fn write_loss_csv(mut w: impl Write, history: &[f64]) -> Result<()> {
    writeln!(w, "epoch,loss")?;
    for (e, l) in history.iter().enumerate() {
        writeln!(w, "{e},{l}")?;
    }
    Ok(())
}
