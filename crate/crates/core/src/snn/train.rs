//! Surrogate-gradient training with an STDP term.
//!
//! Each epoch simulates a fresh pass of `steps_per_epoch` steps over the
//! normalized return rows, decodes the spike counts into weights, evaluates
//! the composite loss and updates the per-neuron input weights. Spike counts
//! are differentiated per spike decision: the surrogate derivative at the
//! decision times the forward-mode sensitivity of the membrane potential to
//! the neuron's input weight since its last reset.

use ndarray::{Array2, Axis};

use super::network::{init_lateral_weights, simulate, Probe, StepView};
use super::neuron::surrogate_grad;
use super::plasticity::StdpTrace;
use super::{NetworkState, NeuronParams, PopulationLayout, SpikeRaster, StdpParams};
use crate::decoder::{decode_backward, decode_counts, DecodeConfig};
use crate::encoding::{encode_timestep_into, lambda_at, EncodingConfig, ReceptiveFieldBank, RiskAversionSchedule, RiskReturnInputs};
use crate::error::{Error, Result};
use crate::market_data::NormalizedReturns;
use crate::portfolio::{composite_loss, composite_loss_gradient, LossBreakdown, Moments, ObjectiveConfig, PortfolioWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct SnnConfig {
    pub neuron: NeuronParams,
    pub stdp: StdpParams,
    pub encoding: EncodingConfig,
    pub schedule: RiskAversionSchedule,
    pub decode: DecodeConfig,
    pub objective: ObjectiveConfig,
    pub surrogate_alpha: f64,
    pub inhibition_beta: f64,
    pub theta_lat: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    pub stdp_rate: f64,
    pub syn_init: f64,
    /// Whether encoding noise is also applied when decoding a trained network.
    pub noise_at_inference: bool,
}

impl Default for SnnConfig {
    fn default() -> Self {
        Self {
            neuron: NeuronParams::default(),
            stdp: StdpParams::default(),
            encoding: EncodingConfig::default(),
            schedule: RiskAversionSchedule::default(),
            decode: DecodeConfig::default(),
            objective: ObjectiveConfig::default(),
            surrogate_alpha: 0.5,
            inhibition_beta: 0.5,
            theta_lat: 0.5,
            epochs: 250,
            steps_per_epoch: 100,
            learning_rate: 0.2,
            lr_decay: 0.995,
            stdp_rate: 0.01 * 0.2,
            syn_init: 1.0,
            noise_at_inference: false,
        }
    }
}

impl SnnConfig {
    pub fn validate(&self) -> Result<()> {
        self.neuron.validate()?;
        self.stdp.validate()?;
        self.decode.validate()?;
        self.objective.validate()?;
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Parameter("epochs and steps_per_epoch must be at least 1".into()));
        }
        if !(self.surrogate_alpha > 0.0) {
            return Err(Error::Parameter("surrogate_alpha must be positive".into()));
        }
        if !(self.encoding.noise_sigma >= 0.0) {
            return Err(Error::Parameter("noise_sigma must be nonnegative".into()));
        }
        if self.learning_rate < 0.0 || self.stdp_rate < 0.0 || self.inhibition_beta < 0.0 {
            return Err(Error::Parameter(
                "learning_rate, stdp_rate and inhibition_beta must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Risk-aversion schedule spanning the configured number of epochs.
    pub fn epoch_schedule(&self) -> RiskAversionSchedule {
        RiskAversionSchedule {
            t_max: self.epochs as f64,
            ..self.schedule.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub lambda: f64,
    pub spikes: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    pub layout: PopulationLayout,
    pub tickers: Vec<String>,
    pub state: NetworkState,
    pub inputs: RiskReturnInputs,
    pub bank: ReceptiveFieldBank,
    pub config: SnnConfig,
    /// Weights decoded from the final training epoch.
    pub weights: PortfolioWeights,
    pub raster: SpikeRaster,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: TrainedNetwork,
    pub history: Vec<EpochRecord>,
}

/// Accumulates `∂count/∂w_syn` and the STDP deltas during one pass.
struct LearningProbe<'a> {
    retention: f64,
    gain: f64,
    alpha: f64,
    eligibility: Vec<f64>,
    count_grad: Vec<f64>,
    stdp: StdpTrace,
    stdp_params: &'a StdpParams,
    pre_events: &'a [Vec<bool>],
}

impl Probe for LearningProbe<'_> {
    fn observe(&mut self, v: &StepView<'_>) {
        for n in 0..self.eligibility.len() {
            let e = self.retention * self.eligibility[n] + self.gain * v.input[n];
            self.count_grad[n] += surrogate_grad(v.pre_reset[n], v.thresholds[n], self.alpha) * e;
            self.eligibility[n] = if v.spikes[n] { 0.0 } else { e };
        }
        self.stdp.record(v.time_ms, &self.pre_events[v.step], v.spikes, self.stdp_params);
    }
}

fn population_counts(raster: &SpikeRaster, layout: &PopulationLayout, window: std::ops::Range<usize>) -> Vec<f64> {
    let mut counts = vec![0.0; layout.n_assets];
    for t in window {
        for n in raster.spikes_at(t) {
            counts[layout.asset_of(n)] += 1.0;
        }
    }
    counts
}

/// Per-step input currents and presynaptic events of one pass.
type EncodedPass = (Vec<Vec<f64>>, Vec<Vec<bool>>);

/// Encodes `steps` consecutive rows (cycling) starting at `offset`.
#[allow(clippy::too_many_arguments)]
fn encode_pass(
    rows: &Array2<f64>,
    offset: usize,
    steps: usize,
    inputs: &RiskReturnInputs,
    bank: &ReceptiveFieldBank,
    lambda: f64,
    cfg: &EncodingConfig,
    stream_base: u64,
    with_noise: bool,
) -> Result<EncodedPass> {
    let t_rows = rows.nrows();
    let n_neurons = rows.ncols() * bank.size();
    let pre_level = bank.amplitude * (-0.5f64).exp();
    let mut currents = Vec::with_capacity(steps);
    let mut pre = Vec::with_capacity(steps);
    for s in 0..steps {
        let row: Vec<f64> = rows.row((offset + s) % t_rows).to_vec();
        let mut out = vec![0.0; n_neurons];
        encode_timestep_into(&row, inputs, bank, lambda, cfg, stream_base + s as u64, with_noise, &mut out)?;
        let events = (0..n_neurons)
            .map(|k| bank.response(k % bank.size(), row[k / bank.size()]) >= pre_level)
            .collect();
        currents.push(out);
        pre.push(events);
    }
    Ok((currents, pre))
}

/// Trains the network on normalized returns. `moments` are the per-day
/// moments of the same assets; they drive both the encoder's risk/return
/// term and the loss.
pub fn train(data: &NormalizedReturns, moments: &Moments, cfg: &SnnConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n_assets = data.n_assets();
    if moments.n_assets() != n_assets {
        return Err(Error::DimensionMismatch {
            expected: n_assets,
            got: moments.n_assets(),
        });
    }
    if data.n_rows() < 2 {
        return Err(Error::Parameter("training needs at least 2 return rows".into()));
    }
    let degenerate = data.stats.degenerate_tickers(&data.tickers);
    if !degenerate.is_empty() {
        return Err(Error::DegenerateColumns(degenerate));
    }

    let bank = cfg.encoding.bank()?;
    let layout = PopulationLayout {
        n_assets,
        size: bank.size(),
    };
    let inputs = RiskReturnInputs::from_moments(moments.mu.as_slice().unwrap(), moments.sigma.as_slice().unwrap())?;
    let rho = correlation_of(&data.values);
    let w_lat = init_lateral_weights(&rho, cfg.theta_lat);
    let mut state = NetworkState::new(
        layout,
        &cfg.neuron,
        w_lat,
        vec![cfg.syn_init; layout.n_neurons()],
        cfg.encoding.seed,
    )?;
    let objective = cfg.objective.clamp_to(n_assets);
    let decode = DecodeConfig {
        k: cfg.decode.k.clamp(objective.k_min, objective.k_max),
        ..cfg.decode.clone()
    };
    let sigma = moments.sigma.to_vec();
    let schedule = cfg.epoch_schedule();
    let steps = cfg.steps_per_epoch;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut w_prev = PortfolioWeights::uniform(data.tickers.clone());
    let mut lr = cfg.learning_rate;
    let mut last = None;

    for epoch in 0..cfg.epochs {
        let lambda = lambda_at(epoch as f64, &schedule)?;
        let offset = (epoch * steps) % data.n_rows();
        let (currents, pre) = encode_pass(
            &data.values,
            offset,
            steps,
            &inputs,
            &bank,
            lambda,
            &cfg.encoding,
            (epoch * steps) as u64,
            true,
        )?;

        state.reset_dynamics(&cfg.neuron);
        let mut probe = LearningProbe {
            retention: cfg.neuron.retention(),
            gain: cfg.neuron.dt / cfg.neuron.tau_m * cfg.neuron.r_m,
            alpha: cfg.surrogate_alpha,
            eligibility: vec![0.0; layout.n_neurons()],
            count_grad: vec![0.0; layout.n_neurons()],
            stdp: StdpTrace::new(layout.n_neurons()),
            stdp_params: &cfg.stdp,
            pre_events: &pre,
        };
        let raster = simulate(&mut state, &currents, &layout, &cfg.neuron, cfg.inhibition_beta, &mut probe)?;

        let window = decode.window_range(raster.steps());
        let counts = population_counts(&raster, &layout, window);
        let trace = decode_counts(&counts, &sigma, &data.tickers, &decode)?;
        let loss = composite_loss(&trace.weights.w, &w_prev.w, moments, &objective)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            loss,
            lambda,
            spikes: raster.total_spikes(),
        });

        let grad_w = composite_loss_gradient(&trace.weights.w, &w_prev.w, moments, &objective)?;
        let grad_counts = decode_backward(&trace, &grad_w);
        let grad: Vec<f64> = (0..layout.n_neurons())
            .map(|n| grad_counts[layout.asset_of(n)] * probe.count_grad[n])
            .collect();
        // Loss values are per-day Sharpe units, so raw gradients are tiny;
        // steps are taken along the max-norm-normalized gradient.
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for n in 0..layout.n_neurons() {
            let mut w = state.w_syn[n];
            if scale > 0.0 && scale.is_finite() {
                w -= lr * grad[n] / scale;
            }
            w += cfg.stdp_rate * probe.stdp.delta[n];
            state.w_syn[n] = w.max(0.0);
        }
        lr *= cfg.lr_decay;
        w_prev = trace.weights.clone();
        last = Some((trace.weights, raster));
    }

    let (weights, raster) = last.expect("at least one epoch");
    state.reset_dynamics(&cfg.neuron);
    Ok(TrainOutcome {
        network: TrainedNetwork {
            layout,
            tickers: data.tickers.clone(),
            state,
            inputs,
            bank,
            config: cfg.clone(),
            weights,
            raster,
        },
        history,
    })
}

/// Pearson correlation of the columns of `values`; constant columns get
/// zero off-diagonal correlation.
fn correlation_of(values: &Array2<f64>) -> Array2<f64> {
    let n = values.ncols();
    let t = values.nrows() as f64;
    let mean = values.mean_axis(Axis(0)).unwrap();
    let centered = values - &mean;
    let norms: Vec<f64> = centered.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let _ = t;
    let mut rho = Array2::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let r = if norms[i] > 0.0 && norms[j] > 0.0 {
                (centered.column(i).dot(&centered.column(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            rho[[i, j]] = r;
            rho[[j, i]] = r;
        }
    }
    rho
}

/// `epoch,loss,sharpe,txcost,cardinality_penalty,diversity_penalty`.
pub fn write_loss_history(mut w: impl std::io::Write, history: &[EpochRecord]) -> Result<()> {
    writeln!(w, "epoch,loss,sharpe,txcost,cardinality_penalty,diversity_penalty")?;
    for r in history {
        let l = &r.loss;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch, l.total, l.sharpe, l.transaction_cost, l.cardinality_penalty, l.diversity_penalty
        )?;
    }
    Ok(())
}

impl TrainedNetwork {
    /// Runs the trained network without learning over `rows` (normalized
    /// returns, cycled to fill one pass) and decodes portfolio weights using
    /// the supplied volatilities.
    pub fn infer(&self, rows: &Array2<f64>, sigma: &[f64]) -> Result<(PortfolioWeights, SpikeRaster)> {
        if rows.ncols() != self.layout.n_assets || sigma.len() != self.layout.n_assets {
            return Err(Error::DimensionMismatch {
                expected: self.layout.n_assets,
                got: rows.ncols(),
            });
        }
        if rows.nrows() == 0 {
            return Err(Error::Parameter("inference needs at least one row".into()));
        }
        let cfg = &self.config;
        let schedule = cfg.epoch_schedule();
        let lambda = lambda_at(schedule.t_max, &schedule)?;
        let steps = cfg.steps_per_epoch;
        let offset = rows.nrows().saturating_sub(steps) % rows.nrows();
        let (currents, _) = encode_pass(
            rows,
            offset,
            steps,
            &self.inputs,
            &self.bank,
            lambda,
            &cfg.encoding,
            u64::MAX / 2,
            cfg.noise_at_inference,
        )?;
        let mut state = self.state.clone();
        state.reset_dynamics(&cfg.neuron);
        let raster = simulate(&mut state, &currents, &self.layout, &cfg.neuron, cfg.inhibition_beta, &mut super::NullProbe)?;
        let objective = cfg.objective.clamp_to(self.layout.n_assets);
        let decode = DecodeConfig {
            k: cfg.decode.k.clamp(objective.k_min, objective.k_max),
            ..cfg.decode.clone()
        };
        let counts = population_counts(&raster, &self.layout, decode.window_range(raster.steps()));
        let trace = decode_counts(&counts, sigma, &self.tickers, &decode)?;
        Ok((trace.weights, raster))
    }

    pub fn effective_decode(&self) -> DecodeConfig {
        let objective = self.config.objective.clamp_to(self.layout.n_assets);
        DecodeConfig {
            k: self.config.decode.k.clamp(objective.k_min, objective.k_max),
            ..self.config.decode.clone()
        }
    }
}
