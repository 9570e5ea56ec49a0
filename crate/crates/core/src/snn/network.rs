use ndarray::Array2;

use super::neuron::{adapt_thresholds, lif_step_traced};
use super::{NetworkState, NeuronParams, PopulationLayout, SpikeRaster};
use crate::error::{Error, Result};

/// `w_ij = max(0, ρ_ij − θ)` with a zero diagonal.
pub fn init_lateral_weights(rho: &Array2<f64>, theta_lat: f64) -> Array2<f64> {
    let mut w = rho.mapv(|r| (r - theta_lat).max(0.0));
    for i in 0..w.nrows().min(w.ncols()) {
        w[[i, i]] = 0.0;
    }
    w
}

/// Per-asset inhibitory current from the previous step's asset activity.
pub fn lateral_inhibition_current(prev: &[bool], w_lat: &Array2<f64>, beta: f64) -> Vec<f64> {
    let n = prev.len();
    (0..n)
        .map(|i| {
            let s: f64 = (0..n).filter(|&j| j != i && prev[j]).map(|j| w_lat[[i, j]]).sum();
            -beta * s
        })
        .collect()
}

/// Everything a probe may inspect after one simulated step.
pub struct StepView<'a> {
    pub step: usize,
    pub time_ms: f64,
    /// Encoded input current before synaptic weighting.
    pub input: &'a [f64],
    /// Potentials at the spike decision, before reset.
    pub pre_reset: &'a [f64],
    /// Thresholds the decision was made against.
    pub thresholds: &'a [f64],
    pub spikes: &'a [bool],
}

pub trait Probe {
    fn observe(&mut self, view: &StepView<'_>);
}

pub struct NullProbe;

impl Probe for NullProbe {
    fn observe(&mut self, _: &StepView<'_>) {}
}

/// Runs one pass over `inputs` (one current vector per step). Each step:
/// synaptic drive plus inhibition from the previous step's spikes, LIF
/// update, threshold adaptation, then bookkeeping.
pub fn simulate(
    state: &mut NetworkState,
    inputs: &[Vec<f64>],
    layout: &PopulationLayout,
    p: &NeuronParams,
    inhibition_beta: f64,
    probe: &mut impl Probe,
) -> Result<SpikeRaster> {
    let n = layout.n_neurons();
    if state.n_neurons() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: state.n_neurons(),
        });
    }
    let mut raster = SpikeRaster::new(inputs.len(), n, p.dt);
    let mut drive = vec![0.0; n];
    let mut pre_reset = vec![0.0; n];
    let mut thresholds = vec![0.0; n];
    for (t, input) in inputs.iter().enumerate() {
        if input.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: input.len(),
            });
        }
        let inhibition = lateral_inhibition_current(&state.asset_spiked, &state.w_lat, inhibition_beta);
        for k in 0..n {
            drive[k] = state.w_syn[k] * input[k] + inhibition[layout.asset_of(k)];
        }
        thresholds.copy_from_slice(&state.v_th);
        let spikes = lif_step_traced(state, &drive, p, Some(&mut pre_reset)).map_err(|e| match e {
            Error::Numeric { neuron, .. } => Error::Numeric { step: t, neuron },
            other => other,
        })?;
        adapt_thresholds(state, p);
        state.asset_spiked.fill(false);
        for (k, &s) in spikes.iter().enumerate() {
            if s {
                raster.set(t, k);
                state.asset_spiked[layout.asset_of(k)] = true;
            }
        }
        probe.observe(&StepView {
            step: t,
            time_ms: state.time_ms,
            input,
            pre_reset: &pre_reset,
            thresholds: &thresholds,
            spikes: &spikes,
        });
    }
    Ok(raster)
}

pub fn run_network(
    mut state: NetworkState,
    inputs: &[Vec<f64>],
    layout: &PopulationLayout,
    p: &NeuronParams,
    inhibition_beta: f64,
) -> Result<(SpikeRaster, NetworkState)> {
    let raster = simulate(&mut state, inputs, layout, p, inhibition_beta, &mut NullProbe)?;
    Ok((raster, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn lateral_init() {
        let rho = array![[1.0, 0.5, 0.9], [0.5, 1.0, -0.3], [0.9, -0.3, 1.0]];
        let w = init_lateral_weights(&rho, 0.5);
        assert_eq!(w[[0, 1]], 0.0);
        assert!((w[[0, 2]] - 0.4).abs() < 1e-15);
        assert_eq!(w[[1, 2]], 0.0);
        assert_eq!(w[[0, 0]], 0.0);
    }

    #[test]
    fn inhibition_examples() {
        let w = array![[0.0, 0.4, 0.2], [0.4, 0.0, 0.1], [0.2, 0.1, 0.0]];
        assert_eq!(lateral_inhibition_current(&[false; 3], &w, 1.0), vec![0.0; 3]);
        let i = lateral_inhibition_current(&[false, true, false], &w, 1.0);
        assert_eq!(i, vec![-0.4, 0.0, -0.1]);
        assert!(lateral_inhibition_current(&[true; 3], &w, 0.0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn silent_without_drive() {
        let p = NeuronParams::default();
        let layout = PopulationLayout { n_assets: 2, size: 3 };
        let state = NetworkState::uncoupled(layout, &p);
        let (raster, _) = run_network(state, &vec![vec![0.0; 6]; 50], &layout, &p, 1.0).unwrap();
        assert_eq!(raster.total_spikes(), 0);
    }

    #[test]
    fn constant_drive_fires_periodically() {
        let p = NeuronParams::default();
        let layout = PopulationLayout { n_assets: 1, size: 1 };
        let current = 2.5;
        // first k with R·I·(1 − q^k) ≥ V_th
        let q = p.retention();
        let period = (1..).find(|&k| p.r_m * current * (1.0 - q.powi(k)) >= p.v_th_init).unwrap() as usize;
        assert_eq!(period, 4);
        let state = NetworkState::uncoupled(layout, &p);
        let (raster, _) = run_network(state, &vec![vec![current]; 40], &layout, &p, 0.0).unwrap();
        let times: Vec<usize> = (0..40).filter(|&t| raster.get(t, 0)).collect();
        let expected: Vec<usize> = (1..=40 / period).map(|k| k * period - 1).collect();
        assert_eq!(times, expected);
    }

    #[test]
    fn inhibition_reduces_activity() {
        let p = NeuronParams::default();
        let layout = PopulationLayout { n_assets: 2, size: 4 };
        let rho = array![[1.0, 1.0], [1.0, 1.0]];
        let inputs: Vec<Vec<f64>> = (0..200)
            .map(|t| (0..8).map(|k| 1.5 + 0.3 * ((t + k) as f64 * 0.37).sin()).collect())
            .collect();
        let count = |beta: f64| {
            let w = init_lateral_weights(&rho, 0.0);
            let s = NetworkState::new(layout, &p, w, vec![1.0; 8], 0).unwrap();
            run_network(s, &inputs, &layout, &p, beta).unwrap().0.total_spikes()
        };
        assert!(count(5.0) < count(0.0));
    }

    #[test]
    fn error_reports_step() {
        let p = NeuronParams::default();
        let layout = PopulationLayout { n_assets: 1, size: 2 };
        let mut inputs = vec![vec![0.5, 0.5]; 5];
        inputs[3][1] = f64::INFINITY;
        let err = run_network(NetworkState::uncoupled(layout, &p), &inputs, &layout, &p, 0.0).unwrap_err();
        assert!(matches!(err, Error::Numeric { step: 3, neuron: 1 }));
    }

    proptest! {
        #[test]
        fn thresholds_respect_floor(
            currents in prop::collection::vec(-5.0f64..10.0, 20),
            gamma in 0.0f64..=1.0, target in -1.0f64..2.0,
        ) {
            let p = NeuronParams { threshold_gamma: gamma, v_target: target, ..Default::default() };
            let layout = PopulationLayout { n_assets: 2, size: 2 };
            let inputs: Vec<Vec<f64>> = currents.chunks(4).map(|c| c.to_vec()).collect();
            struct Floor(f64, bool);
            impl Probe for Floor {
                fn observe(&mut self, v: &StepView<'_>) { self.1 &= v.thresholds.iter().all(|&t| t >= self.0 || v.step == 0); }
            }
            let mut state = NetworkState::uncoupled(layout, &p);
            let mut probe = Floor(p.v_th_min, true);
            simulate(&mut state, &inputs, &layout, &p, 0.5, &mut probe).unwrap();
            prop_assert!(probe.1);
            prop_assert!(state.v_th.iter().all(|&t| t >= p.v_th_min));
        }
    }
}
