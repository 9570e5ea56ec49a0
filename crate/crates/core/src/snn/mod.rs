//! Leaky integrate-and-fire network with adaptive thresholds, lateral
//! inhibition, STDP and surrogate-gradient training.
//!
//! Neurons are laid out asset-major: asset `i` owns neurons
//! `i·P .. (i+1)·P`. Lateral inhibition acts between assets, so every neuron
//! of a population receives the same inhibitory current.

mod checkpoint;
mod network;
mod neuron;
mod plasticity;
mod train;

use std::io::Write;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use network::{init_lateral_weights, lateral_inhibition_current, run_network, simulate, NullProbe, Probe, StepView};
pub use neuron::{adapt_thresholds, lif_step, surrogate_grad, surrogate_spike};
pub use plasticity::{stdp_delta, StdpTrace};
pub use train::{train, write_loss_history, EpochRecord, SnnConfig, TrainOutcome, TrainedNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronParams {
    /// Membrane time constant (ms).
    pub tau_m: f64,
    /// Integration step (ms).
    pub dt: f64,
    pub v_rest: f64,
    pub v_reset: f64,
    pub v_target: f64,
    pub v_th_init: f64,
    pub v_th_min: f64,
    pub r_m: f64,
    pub threshold_gamma: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            tau_m: 0.8,
            dt: 0.1,
            v_rest: 0.0,
            v_reset: 0.0,
            v_target: 1.0,
            v_th_init: 1.0,
            v_th_min: 0.2,
            r_m: 1.0,
            threshold_gamma: 0.98,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 0.0) || !(self.dt > 0.0) {
            return Err(Error::Parameter("tau_m and dt must be positive".into()));
        }
        if self.dt > self.tau_m {
            return Err(Error::Parameter(format!(
                "dt = {} exceeds tau_m = {}; forward Euler would be unstable",
                self.dt, self.tau_m
            )));
        }
        if self.v_th_min > self.v_th_init {
            return Err(Error::Parameter("v_th_min must not exceed v_th_init".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold_gamma) {
            return Err(Error::Parameter("threshold_gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Per-step leak retention `1 − dt/τ_m`.
    pub fn retention(&self) -> f64 {
        1.0 - self.dt / self.tau_m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdpParams {
    pub a_plus: f64,
    pub a_minus: f64,
    pub tau_plus: f64,
    pub tau_minus: f64,
}

impl Default for StdpParams {
    fn default() -> Self {
        Self {
            a_plus: 0.01,
            a_minus: 0.01,
            tau_plus: 20.0,
            tau_minus: 20.0,
        }
    }
}

impl StdpParams {
    pub fn validate(&self) -> Result<()> {
        if [self.a_plus, self.a_minus, self.tau_plus, self.tau_minus]
            .iter()
            .any(|x| !(*x > 0.0))
        {
            return Err(Error::Parameter("STDP amplitudes and time constants must be positive".into()));
        }
        Ok(())
    }
}

/// Asset-major partition of neurons into equally sized populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PopulationLayout {
    pub n_assets: usize,
    pub size: usize,
}

impl PopulationLayout {
    pub fn n_neurons(&self) -> usize {
        self.n_assets * self.size
    }

    pub fn asset_of(&self, neuron: usize) -> usize {
        neuron / self.size
    }

    pub fn neurons_of(&self, asset: usize) -> std::ops::Range<usize> {
        asset * self.size..(asset + 1) * self.size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub v: Vec<f64>,
    pub v_th: Vec<f64>,
    /// Time (ms) of each neuron's most recent spike.
    pub last_spike: Vec<Option<f64>>,
    /// Asset × asset inhibitory weights, nonnegative with a zero diagonal.
    pub w_lat: Array2<f64>,
    /// Input synaptic weight per neuron.
    pub w_syn: Vec<f64>,
    /// Which assets had at least one spike on the previous step.
    pub asset_spiked: Vec<bool>,
    pub time_ms: f64,
    pub step: usize,
    pub seed: u64,
}

impl NetworkState {
    pub fn new(layout: PopulationLayout, params: &NeuronParams, w_lat: Array2<f64>, w_syn: Vec<f64>, seed: u64) -> Result<Self> {
        let n = layout.n_neurons();
        if w_syn.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w_syn.len(),
            });
        }
        if w_lat.dim() != (layout.n_assets, layout.n_assets) {
            return Err(Error::DimensionMismatch {
                expected: layout.n_assets * layout.n_assets,
                got: w_lat.len(),
            });
        }
        Ok(Self {
            v: vec![params.v_rest; n],
            v_th: vec![params.v_th_init; n],
            last_spike: vec![None; n],
            w_lat,
            w_syn,
            asset_spiked: vec![false; layout.n_assets],
            time_ms: 0.0,
            step: 0,
            seed,
        })
    }

    /// Fresh state with unit synaptic weights and no lateral coupling.
    pub fn uncoupled(layout: PopulationLayout, params: &NeuronParams) -> Self {
        Self::new(
            layout,
            params,
            Array2::zeros((layout.n_assets, layout.n_assets)),
            vec![1.0; layout.n_neurons()],
            0,
        )
        .expect("shapes are consistent by construction")
    }

    pub fn n_neurons(&self) -> usize {
        self.v.len()
    }

    /// Restores membrane potentials, thresholds and spike history while
    /// keeping the learned weights.
    pub fn reset_dynamics(&mut self, params: &NeuronParams) {
        self.v.fill(params.v_rest);
        self.v_th.fill(params.v_th_init);
        self.last_spike.fill(None);
        self.asset_spiked.fill(false);
        self.time_ms = 0.0;
        self.step = 0;
    }
}

/// Steps × neurons spike record.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeRaster {
    steps: usize,
    neurons: usize,
    dt: f64,
    cells: Vec<bool>,
    counts: Vec<usize>,
}

impl SpikeRaster {
    pub fn new(steps: usize, neurons: usize, dt: f64) -> Self {
        Self {
            steps,
            neurons,
            dt,
            cells: vec![false; steps * neurons],
            counts: vec![0; neurons],
        }
    }

    pub fn set(&mut self, step: usize, neuron: usize) {
        let cell = &mut self.cells[step * self.neurons + neuron];
        if !*cell {
            *cell = true;
            self.counts[neuron] += 1;
        }
    }

    pub fn get(&self, step: usize, neuron: usize) -> bool {
        self.cells[step * self.neurons + neuron]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n_neurons(&self) -> usize {
        self.neurons
    }

    /// Time (ms) at the end of `step`, when its spikes are stamped.
    pub fn time_of(&self, step: usize) -> f64 {
        (step + 1) as f64 * self.dt
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total_spikes(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn spikes_at(&self, step: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.cells[step * self.neurons..(step + 1) * self.neurons];
        row.iter().enumerate().filter(|(_, &s)| s).map(|(n, _)| n)
    }

    /// `step,neuron,asset` rows, one per spike.
    pub fn write_csv(&self, mut w: impl Write, layout: &PopulationLayout) -> Result<()> {
        writeln!(w, "step,neuron,asset")?;
        for t in 0..self.steps {
            for n in self.spikes_at(t) {
                writeln!(w, "{t},{n},{}", layout.asset_of(n))?;
            }
        }
        Ok(())
    }
}
