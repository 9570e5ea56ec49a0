//! Spike counts to portfolio weights: population-count decoding, volatility
//! adjustment, top-K selection and renormalization.

use std::io::Write;
use std::ops::Range;

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::portfolio::{flush_small, PortfolioWeights, FLUSH_EPSILON};
use crate::snn::{PopulationLayout, SpikeRaster};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    /// Decoding window in steps; `None` uses the whole raster.
    pub window: Option<usize>,
    pub risk_gamma: f64,
    pub k: usize,
    pub flush_epsilon: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            window: None,
            risk_gamma: 1.0,
            k: 40,
            flush_epsilon: FLUSH_EPSILON,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == Some(0) {
            return Err(Error::Parameter("decode window must be at least 1 step".into()));
        }
        if !(self.risk_gamma >= 0.0) || !(self.flush_epsilon >= 0.0) {
            return Err(Error::Parameter("risk_gamma and flush_epsilon must be nonnegative".into()));
        }
        if self.k == 0 {
            return Err(Error::Parameter("target cardinality must be positive".into()));
        }
        Ok(())
    }

    /// The trailing window of a raster with `steps` rows.
    pub fn window_range(&self, steps: usize) -> Range<usize> {
        match self.window {
            Some(w) if w < steps => steps - w..steps,
            _ => 0..steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDecode {
    pub weights: Vec<f64>,
    pub counts: Vec<f64>,
    /// Set when the window held no spikes and uniform weights were returned.
    pub degenerate: bool,
}

/// Per-population spike counts over `window`, as fractions of the total.
pub fn decode_raw_weights(raster: &SpikeRaster, layout: &PopulationLayout, window: Range<usize>) -> Result<RawDecode> {
    if layout.size == 0 || layout.n_assets == 0 {
        return Err(Error::Parameter("populations must be non-empty".into()));
    }
    if layout.n_neurons() != raster.n_neurons() {
        return Err(Error::DimensionMismatch {
            expected: layout.n_neurons(),
            got: raster.n_neurons(),
        });
    }
    if window.end > raster.steps() || window.start > window.end {
        return Err(Error::Parameter(format!(
            "window {window:?} outside raster of {} steps",
            raster.steps()
        )));
    }
    let mut counts = vec![0.0; layout.n_assets];
    for t in window {
        for n in raster.spikes_at(t) {
            counts[layout.asset_of(n)] += 1.0;
        }
    }
    Ok(raw_from_counts(&counts))
}

pub fn raw_from_counts(counts: &[f64]) -> RawDecode {
    let total: f64 = counts.iter().sum();
    let n = counts.len();
    if total <= 0.0 {
        return RawDecode {
            weights: vec![1.0 / n as f64; n],
            counts: counts.to_vec(),
            degenerate: true,
        };
    }
    RawDecode {
        weights: counts.iter().map(|c| c / total).collect(),
        counts: counts.to_vec(),
        degenerate: false,
    }
}

/// Scales raw weights by `σ^−γ` and renormalizes.
pub fn risk_adjust(raw: &[f64], sigma: &[f64], risk_gamma: f64) -> Result<Vec<f64>> {
    if raw.len() != sigma.len() {
        return Err(Error::DimensionMismatch {
            expected: raw.len(),
            got: sigma.len(),
        });
    }
    let mut scaled = Vec::with_capacity(raw.len());
    for (i, (&r, &s)) in raw.iter().zip(sigma).enumerate() {
        if r > 0.0 && !(s > 0.0) {
            return Err(Error::Domain(format!("asset {i} has positive weight but zero volatility")));
        }
        scaled.push(if r > 0.0 { r * s.powf(-risk_gamma) } else { 0.0 });
    }
    let total: f64 = scaled.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all raw weights are zero".into()));
    }
    Ok(scaled.into_iter().map(|x| x / total).collect())
}

/// Indices of the `k` largest weights; ties go to the lexicographically
/// smaller ticker. Only strictly positive weights are eligible.
pub fn top_k(weights: &[f64], tickers: &[String], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| tickers[a].cmp(&tickers[b]))
    });
    order.truncate(k);
    order
}

/// Keeps the top-`k` assets and renormalizes them to sum to one. If fewer
/// than `k` weights are positive, `k` is lowered to that count.
pub fn enforce_cardinality(adjusted: &[f64], tickers: &[String], k: usize, flush_epsilon: f64) -> Result<PortfolioWeights> {
    select_top_k(adjusted, tickers, k, flush_epsilon, true)
}

fn select_top_k(
    adjusted: &[f64],
    tickers: &[String],
    k: usize,
    flush_epsilon: f64,
    warn_on_shortfall: bool,
) -> Result<PortfolioWeights> {
    if adjusted.len() != tickers.len() {
        return Err(Error::DimensionMismatch {
            expected: tickers.len(),
            got: adjusted.len(),
        });
    }
    if k == 0 {
        return Err(Error::Parameter("target cardinality must be positive".into()));
    }
    let w: Vec<f64> = adjusted
        .iter()
        .map(|&x| if x.abs() <= flush_epsilon { 0.0 } else { x })
        .collect();
    let positive = w.iter().filter(|&&x| x > 0.0).count();
    if positive == 0 {
        return Err(Error::Degenerate("no positive weights to select from".into()));
    }
    if positive < k {
        let msg = format!("target cardinality {k} exceeds {positive} positive weights; using {positive}");
        if warn_on_shortfall {
            warn!("{msg}");
        } else {
            debug!("{msg}");
        }
    }
    let keep = top_k(&w, tickers, k);
    let total: f64 = keep.iter().map(|&i| w[i]).sum();
    let mut out = vec![0.0; w.len()];
    for &i in &keep {
        out[i] = w[i] / total;
    }
    flush_small(&mut out);
    Ok(PortfolioWeights {
        tickers: tickers.to_vec(),
        w: out,
    })
}

/// Intermediate values of one decode, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub raw: RawDecode,
    pub vol_factor: Vec<f64>,
    pub adjusted: Vec<f64>,
    pub selected: Vec<usize>,
    pub weights: PortfolioWeights,
}

/// Counts → raw → risk-adjusted → top-K, recording everything needed to
/// differentiate the final weights with respect to the counts.
pub fn decode_counts(counts: &[f64], sigma: &[f64], tickers: &[String], cfg: &DecodeConfig) -> Result<DecodeTrace> {
    let raw = raw_from_counts(counts);
    let adjusted = risk_adjust(&raw.weights, sigma, cfg.risk_gamma)?;
    // spike counts routinely leave fewer than K assets active; not worth a warning
    let weights = select_top_k(&adjusted, tickers, cfg.k, cfg.flush_epsilon, false)?;
    let selected = (0..weights.len()).filter(|&i| weights.w[i] > 0.0).collect();
    let vol_factor = sigma
        .iter()
        .map(|s| if *s > 0.0 { s.powf(-cfg.risk_gamma) } else { 0.0 })
        .collect();
    Ok(DecodeTrace {
        raw,
        vol_factor,
        adjusted,
        selected,
        weights,
    })
}

/// Given `∂L/∂w` for the final weights, returns `∂L/∂count` per asset. The
/// top-K mask is held fixed; a silent window is differentiated as if the
/// total count were one.
pub fn decode_backward(trace: &DecodeTrace, grad_w: &[f64]) -> Vec<f64> {
    let n = grad_w.len();
    // renormalization over the selected set
    let sel_total: f64 = trace.selected.iter().map(|&i| trace.adjusted[i]).sum();
    let mut g_adj = vec![0.0; n];
    if sel_total > 0.0 {
        let dot: f64 = trace.selected.iter().map(|&i| grad_w[i] * trace.weights.w[i]).sum();
        for &i in &trace.selected {
            g_adj[i] = (grad_w[i] - dot) / sel_total;
        }
    }
    // volatility adjustment: adj = b / Σb with b = raw · σ^−γ
    let b: Vec<f64> = (0..n).map(|i| trace.raw.weights[i] * trace.vol_factor[i]).collect();
    let b_total: f64 = b.iter().sum();
    let mut g_raw = vec![0.0; n];
    if b_total > 0.0 {
        let dot: f64 = (0..n).map(|i| g_adj[i] * trace.adjusted[i]).sum();
        for i in 0..n {
            g_raw[i] = (g_adj[i] - dot) / b_total * trace.vol_factor[i];
        }
    }
    // raw = c / Σc
    let c_total: f64 = trace.raw.counts.iter().sum();
    let c_total = if c_total > 0.0 { c_total } else { 1.0 };
    let dot: f64 = (0..n).map(|i| g_raw[i] * trace.raw.weights[i]).sum();
    (0..n).map(|i| (g_raw[i] - dot) / c_total).collect()
}

pub fn write_weights_csv(mut w: impl Write, weights: &PortfolioWeights, cfg: &DecodeConfig) -> Result<()> {
    let window = cfg.window.map_or_else(|| "full".to_string(), |x| x.to_string());
    writeln!(
        w,
        "# window={window},risk_gamma={},k={},flush_epsilon={}",
        cfg.risk_gamma, cfg.k, cfg.flush_epsilon
    )?;
    writeln!(w, "ticker,weight")?;
    for (t, x) in weights.tickers.iter().zip(&weights.w) {
        writeln!(w, "{t},{x}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("T{i:02}")).collect()
    }

    #[test]
    fn raw_weight_examples() {
        let layout = PopulationLayout { n_assets: 3, size: 2 };
        let mut raster = SpikeRaster::new(40, 6, 1.0);
        for t in 0..30 {
            raster.set(t, t % 2);
        }
        for t in 0..10 {
            raster.set(t, 2 + t % 2);
        }
        let d = decode_raw_weights(&raster, &layout, 0..40).unwrap();
        assert_eq!(d.weights, vec![0.75, 0.25, 0.0]);
        assert!(!d.degenerate);

        let silent = SpikeRaster::new(10, 6, 1.0);
        let d = decode_raw_weights(&silent, &layout, 0..10).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.weights, vec![1.0 / 3.0; 3]);

        let mut even = SpikeRaster::new(3, 6, 1.0);
        for n in 0..6 {
            even.set(1, n);
        }
        assert_eq!(decode_raw_weights(&even, &layout, 0..3).unwrap().weights, vec![1.0 / 3.0; 3]);

        let empty = PopulationLayout { n_assets: 3, size: 0 };
        assert!(decode_raw_weights(&silent, &empty, 0..1).is_err());
        assert!(decode_raw_weights(&silent, &layout, 0..11).is_err());
    }

    #[test]
    fn risk_adjust_examples() {
        assert_eq!(risk_adjust(&[0.2, 0.8], &[0.1, 0.3], 0.0).unwrap(), vec![0.2, 0.8]);
        let a = risk_adjust(&[0.5, 0.5], &[0.1, 0.2], 1.0).unwrap();
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-12 && (a[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(risk_adjust(&[0.0, 1.0], &[0.1, 0.4], 3.0).unwrap(), vec![0.0, 1.0]);
        assert!(risk_adjust(&[0.5, 0.5], &[0.0, 0.1], 1.0).is_err());
        assert!(risk_adjust(&[0.0, 1.0], &[0.0, 0.1], 1.0).is_ok());
    }

    #[test]
    fn cardinality_examples() {
        let t = names(3);
        let w = enforce_cardinality(&[0.5, 0.3, 0.2], &t, 2, FLUSH_EPSILON).unwrap();
        assert!((w.w[0] - 0.625).abs() < 1e-12 && (w.w[1] - 0.375).abs() < 1e-12);
        assert_eq!(w.w[2], 0.0);
        let w = enforce_cardinality(&[0.5, 0.3, 0.2], &t, 3, FLUSH_EPSILON).unwrap();
        assert_eq!(w.w, vec![0.5, 0.3, 0.2]);
        let tied = vec!["B".to_string(), "A".to_string(), "C".to_string()];
        let w = enforce_cardinality(&[0.25, 0.25, 0.5], &tied, 2, FLUSH_EPSILON).unwrap();
        assert!(w.w[1] > 0.0 && w.w[0] == 0.0);
        assert!(enforce_cardinality(&[0.0, 0.0], &names(2), 1, FLUSH_EPSILON).is_err());
        // more slots than positive weights
        let w = enforce_cardinality(&[0.0, 1.0, 0.0], &t, 2, FLUSH_EPSILON).unwrap();
        assert_eq!(w.w, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let sigma = [0.01, 0.02, 0.015, 0.03];
        let t = names(4);
        let cfg = DecodeConfig { k: 3, ..Default::default() };
        let counts = [30.0, 12.0, 25.0, 7.0];
        // arbitrary linear loss L = g·w
        let g = [0.3, -1.2, 0.7, 2.0];
        let loss = |c: &[f64]| -> f64 {
            let tr = decode_counts(c, &sigma, &t, &cfg).unwrap();
            tr.weights.w.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let tr = decode_counts(&counts, &sigma, &t, &cfg).unwrap();
        let grad = decode_backward(&tr, &g);
        for i in 0..4 {
            let h = 1e-5;
            let mut up = counts;
            let mut dn = counts;
            up[i] += h;
            dn[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8, "asset {i}: {fd} vs {}", grad[i]);
        }
    }

    fn weight_vec() -> impl Strategy<Value = (Vec<f64>, usize)> {
        (2usize..15).prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n), 1..=n))
    }

    proptest! {
        #[test]
        fn output_is_feasible((w, k) in weight_vec()) {
            prop_assume!(w.iter().any(|&x| x > FLUSH_EPSILON));
            let t = names(w.len());
            let out = enforce_cardinality(&w, &t, k, FLUSH_EPSILON).unwrap();
            let positive = w.iter().filter(|&&x| x > FLUSH_EPSILON).count();
            prop_assert!(out.w.iter().all(|&x| x >= 0.0));
            prop_assert!((out.w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(crate::portfolio::cardinality(&out.w), k.min(positive));
            let again = enforce_cardinality(&out.w, &t, k, FLUSH_EPSILON).unwrap();
            for (a, b) in again.w.iter().zip(&out.w) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn selection_is_nested((w, k) in weight_vec()) {
            prop_assume!(k < w.len() && w.iter().any(|&x| x > FLUSH_EPSILON));
            let t = names(w.len());
            let small = enforce_cardinality(&w, &t, k, FLUSH_EPSILON).unwrap();
            let large = enforce_cardinality(&w, &t, k + 1, FLUSH_EPSILON).unwrap();
            for i in 0..w.len() {
                prop_assert!(small.w[i] == 0.0 || large.w[i] > 0.0);
            }
        }

        #[test]
        fn equal_volatility_is_identity(w in prop::collection::vec(0.01f64..1.0, 2..10), s in 0.001f64..1.0, g in 0.0f64..4.0) {
            let total: f64 = w.iter().sum();
            let raw: Vec<f64> = w.iter().map(|x| x / total).collect();
            let adj = risk_adjust(&raw, &vec![s; raw.len()], g).unwrap();
            for (a, b) in adj.iter().zip(&raw) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
