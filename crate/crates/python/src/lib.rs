//! Python bindings for the `spikefolio` core crate.
//!
//! Matrices cross the boundary as lists of rows (`list[list[float]]`), one
//! row per day and one column per asset. Errors surface as `ValueError`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::NaiveDate;
use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use spikefolio::ann::{self, MlpConfig};
use spikefolio::clustering;
use spikefolio::decoder::{self, DecodeConfig};
use spikefolio::harness;
use spikefolio::market_data::{apply_zscore, zscore_normalize, ColumnStats, ReturnMatrix};
use spikefolio::portfolio::{self, moments_of, ObjectiveConfig, PortfolioWeights};
use spikefolio::snn::{self, NetworkState, NeuronParams, PopulationLayout, SnnConfig, StdpParams};

fn py_err(e: spikefolio::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((rows.len(), n), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn tickers(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("A{i}")).collect()
}

/// Wraps raw rows in a return matrix with placeholder daily dates.
fn return_matrix(rows: &[Vec<f64>]) -> PyResult<ReturnMatrix> {
    let m = matrix(rows)?;
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let dates = (0..m.nrows()).map(|i| start + chrono::Days::new(i as u64)).collect();
    ReturnMatrix::new(dates, tickers(m.ncols()), m).map_err(py_err)
}

/// Sharpe ratio of `weights` under the sample moments of `returns`.
#[pyfunction]
#[pyo3(signature = (weights, returns, risk_free = 0.0, eps = 1e-8))]
fn sharpe_ratio(weights: Vec<f64>, returns: Vec<Vec<f64>>, risk_free: f64, eps: f64) -> PyResult<f64> {
    let m = moments_of(&matrix(&returns)?).map_err(py_err)?;
    let cfg = ObjectiveConfig {
        risk_free,
        eps,
        ..ObjectiveConfig::default()
    };
    portfolio::sharpe(&weights, &m, &cfg).map_err(py_err)
}

#[pyfunction]
fn surrogate_grad(v: f64, v_th: f64, alpha: f64) -> f64 {
    snn::surrogate_grad(v, v_th, alpha)
}

#[pyfunction]
fn surrogate_spike(v: f64, v_th: f64, alpha: f64) -> f64 {
    snn::surrogate_spike(v, v_th, alpha)
}

#[pyfunction]
#[pyo3(signature = (t_pre, t_post, a_plus = 0.01, a_minus = 0.01, tau_plus = 20.0, tau_minus = 20.0))]
fn stdp_delta(t_pre: f64, t_post: f64, a_plus: f64, a_minus: f64, tau_plus: f64, tau_minus: f64) -> f64 {
    let p = StdpParams {
        a_plus,
        a_minus,
        tau_plus,
        tau_minus,
    };
    snn::stdp_delta(t_pre, t_post, &p)
}

/// Drives one LIF neuron with a constant current. Returns the membrane
/// potential after every step and the steps on which it spiked.
#[pyfunction]
#[pyo3(signature = (current, steps, tau_m = 0.8, dt = 0.1, v_th = 1.0, threshold_gamma = 1.0))]
fn lif_trace(
    current: f64,
    steps: usize,
    tau_m: f64,
    dt: f64,
    v_th: f64,
    threshold_gamma: f64,
) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let p = NeuronParams {
        tau_m,
        dt,
        v_th_init: v_th,
        v_th_min: v_th.min(NeuronParams::default().v_th_min),
        threshold_gamma,
        ..NeuronParams::default()
    };
    p.validate().map_err(py_err)?;
    let mut state = NetworkState::uncoupled(PopulationLayout { n_assets: 1, size: 1 }, &p);
    let mut v = Vec::with_capacity(steps);
    let mut spikes = Vec::new();
    for t in 0..steps {
        if snn::lif_step(&mut state, &[current], &p).map_err(py_err)?[0] {
            spikes.push(t);
        }
        snn::adapt_thresholds(&mut state, &p);
        v.push(state.v[0]);
    }
    Ok((v, spikes))
}

/// Keeps the `k` largest weights and renormalizes them.
#[pyfunction]
#[pyo3(signature = (adjusted, k, flush_epsilon = 1e-12))]
fn enforce_cardinality(adjusted: Vec<f64>, k: usize, flush_epsilon: f64) -> PyResult<Vec<f64>> {
    let t = tickers(adjusted.len());
    Ok(decoder::enforce_cardinality(&adjusted, &t, k, flush_epsilon).map_err(py_err)?.w)
}

/// Spike counts per asset to portfolio weights.
#[pyfunction]
#[pyo3(signature = (counts, sigma, k, risk_gamma = 1.0))]
fn decode_counts(counts: Vec<f64>, sigma: Vec<f64>, k: usize, risk_gamma: f64) -> PyResult<Vec<f64>> {
    let cfg = DecodeConfig {
        k,
        risk_gamma,
        ..DecodeConfig::default()
    };
    cfg.validate().map_err(py_err)?;
    let t = tickers(counts.len());
    Ok(decoder::decode_counts(&counts, &sigma, &t, &cfg).map_err(py_err)?.weights.w)
}

fn distance(returns: &[Vec<f64>]) -> PyResult<clustering::DistanceMatrix> {
    let rm = return_matrix(returns)?;
    let cm = clustering::correlation_matrix(&rm).map_err(py_err)?;
    Ok(clustering::correlation_distance(&cm))
}

/// Ward clustering of the return columns on correlation distance.
#[pyfunction]
fn ward_cluster(returns: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<usize>> {
    Ok(clustering::ward_cluster(&distance(&returns)?, k).map_err(py_err)?.labels)
}

/// Best cluster count by silhouette, with the silhouette of every candidate.
#[pyfunction]
fn select_cluster_count(returns: Vec<Vec<f64>>, k_min: usize, k_max: usize) -> PyResult<(usize, Vec<(usize, f64)>)> {
    let (k, scores) = clustering::select_cluster_count(&distance(&returns)?, k_min, k_max).map_err(py_err)?;
    Ok((k, scores.iter().map(|s| (s.k, s.silhouette)).collect()))
}

/// Runs a weight schedule of `(row, weights)` pairs over `returns`. The
/// first entry must be row 0. Returns the equity curve and turnover series.
#[pyfunction]
#[pyo3(signature = (schedule, returns, transaction_cost = 0.0025))]
fn backtest(
    schedule: Vec<(usize, Vec<f64>)>,
    returns: Vec<Vec<f64>>,
    transaction_cost: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let rm = return_matrix(&returns)?;
    let sched = schedule
        .into_iter()
        .map(|(row, w)| {
            let date = *rm
                .dates
                .get(row)
                .ok_or_else(|| PyValueError::new_err(format!("schedule row {row} is past the last return day")))?;
            Ok((date, PortfolioWeights::new(rm.tickers.clone(), w).map_err(py_err)?))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let r = harness::backtest(&sched, &rm, transaction_cost).map_err(py_err)?;
    Ok((r.equity_curve, r.turnover_series))
}

/// Runs the full pipeline from a config file and returns its metrics.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir, seed = None))]
fn run_pipeline(config_path: PathBuf, out_dir: PathBuf, seed: Option<u64>) -> PyResult<BTreeMap<String, f64>> {
    Ok(harness::run_pipeline(&config_path, &out_dir, seed).map_err(py_err)?.metrics)
}

/// A spiking network trained on a return history.
#[pyclass(module = "spikefolio_py")]
struct SpikingNetwork {
    inner: snn::TrainedNetwork,
    stats: ColumnStats,
    history: Vec<f64>,
    returns: Array2<f64>,
}

#[pymethods]
impl SpikingNetwork {
    #[new]
    #[pyo3(signature = (returns, population_size = 20, epochs = 250, steps_per_epoch = 100, k = 40, seed = 0))]
    fn new(
        returns: Vec<Vec<f64>>,
        population_size: usize,
        epochs: usize,
        steps_per_epoch: usize,
        k: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let rm = return_matrix(&returns)?;
        let normalized = zscore_normalize(&rm).map_err(py_err)?;
        let moments = moments_of(&rm.returns).map_err(py_err)?;
        let mut cfg = SnnConfig::default();
        cfg.encoding.population_size = population_size;
        cfg.encoding.seed = seed;
        cfg.epochs = epochs;
        cfg.steps_per_epoch = steps_per_epoch;
        cfg.decode.k = k;
        let out = snn::train(&normalized, &moments, &cfg).map_err(py_err)?;
        Ok(Self {
            history: out.history.iter().map(|r| r.loss.total).collect(),
            inner: out.network,
            stats: normalized.stats,
            returns: rm.returns,
        })
    }

    /// Composite loss after every epoch.
    #[getter]
    fn loss_history(&self) -> Vec<f64> {
        self.history.clone()
    }

    /// Learned input synaptic weight of every neuron.
    #[getter]
    fn synaptic_weights(&self) -> Vec<f64> {
        self.inner.state.w_syn.clone()
    }

    /// Decodes weights from the most recent `steps_per_epoch` rows of
    /// `window` (raw returns, normalized with the training statistics) and
    /// the volatility of all of `window`. Returns the weights and the total
    /// spike count of the inference run. Defaults to the training history.
    #[pyo3(signature = (window = None))]
    fn infer(&self, window: Option<Vec<Vec<f64>>>) -> PyResult<(Vec<f64>, usize)> {
        let raw = match window {
            Some(w) => matrix(&w)?,
            None => self.returns.clone(),
        };
        let sigma = moments_of(&raw).map_err(py_err)?.sigma.to_vec();
        let steps = self.inner.config.steps_per_epoch.min(raw.nrows());
        let rows: Vec<Vec<f64>> = raw.rows().into_iter().skip(raw.nrows() - steps).map(|r| r.to_vec()).collect();
        let z = apply_zscore(&return_matrix(&rows)?, &self.stats).map_err(py_err)?;
        let (w, raster) = self.inner.infer(&z.values, &sigma).map_err(py_err)?;
        Ok((w.w, raster.total_spikes()))
    }
}

/// The feedforward baseline trained on a return history.
#[pyclass(module = "spikefolio_py")]
struct Mlp {
    inner: ann::AnnModel,
    history: Vec<f64>,
    stats: ColumnStats,
    returns: Array2<f64>,
}

#[pymethods]
impl Mlp {
    #[new]
    #[pyo3(signature = (returns, hidden_size = 16, epochs = 150, learning_rate = 0.02, seed = 0))]
    fn new(returns: Vec<Vec<f64>>, hidden_size: usize, epochs: usize, learning_rate: f64, seed: u64) -> PyResult<Self> {
        let rm = return_matrix(&returns)?;
        let normalized = zscore_normalize(&rm).map_err(py_err)?;
        let cfg = MlpConfig {
            hidden_size,
            epochs,
            learning_rate,
            seed,
            ..MlpConfig::default()
        };
        let out = ann::train_ann(rm.returns.view(), &normalized, &cfg, &ObjectiveConfig::default()).map_err(py_err)?;
        Ok(Self {
            inner: out.model,
            history: out.loss_history,
            stats: normalized.stats,
            returns: rm.returns,
        })
    }

    /// Full-sample negative Sharpe after every epoch.
    #[getter]
    fn loss_history(&self) -> Vec<f64> {
        self.history.clone()
    }

    /// Softmax weights from the moments of `window` and its last row.
    /// Defaults to the training history.
    #[pyo3(signature = (window = None))]
    fn predict(&self, window: Option<Vec<Vec<f64>>>) -> PyResult<Vec<f64>> {
        let raw = match window {
            Some(w) => matrix(&w)?,
            None => self.returns.clone(),
        };
        let m = moments_of(&raw).map_err(py_err)?;
        let last = return_matrix(&[raw.row(raw.nrows() - 1).to_vec()])?;
        let z = apply_zscore(&last, &self.stats).map_err(py_err)?;
        let w = self
            .inner
            .predict(m.mu.as_slice().unwrap(), m.sigma.as_slice().unwrap(), &z.values.row(0).to_vec())
            .map_err(py_err)?;
        Ok(w.w)
    }
}

#[pymodule]
fn spikefolio_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sharpe_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_grad, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_spike, m)?)?;
    m.add_function(wrap_pyfunction!(stdp_delta, m)?)?;
    m.add_function(wrap_pyfunction!(lif_trace, m)?)?;
    m.add_function(wrap_pyfunction!(enforce_cardinality, m)?)?;
    m.add_function(wrap_pyfunction!(decode_counts, m)?)?;
    m.add_function(wrap_pyfunction!(ward_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(select_cluster_count, m)?)?;
    m.add_function(wrap_pyfunction!(backtest, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_class::<SpikingNetwork>()?;
    m.add_class::<Mlp>()?;
    Ok(())
}
