use std::f64::consts::PI;

use super::{NetworkState, NeuronParams};
use crate::error::{Error, Result};

/// One forward-Euler step of every membrane. Neurons at or above threshold
/// spike and reset. `pre_reset`, when given, receives the potentials before
/// reset (the values the spike decision was made on).
pub(crate) fn lif_step_traced(
    state: &mut NetworkState,
    current: &[f64],
    p: &NeuronParams,
    mut pre_reset: Option<&mut [f64]>,
) -> Result<Vec<bool>> {
    let n = state.n_neurons();
    if current.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: current.len(),
        });
    }
    if let Some(i) = current.iter().position(|c| !c.is_finite()) {
        return Err(Error::Numeric {
            step: state.step,
            neuron: i,
        });
    }
    let k = p.dt / p.tau_m;
    let now = state.time_ms + p.dt;
    let mut spikes = vec![false; n];
    for i in 0..n {
        let v = state.v[i] + k * (-(state.v[i] - p.v_rest) + p.r_m * current[i]);
        if let Some(buf) = pre_reset.as_deref_mut() {
            buf[i] = v;
        }
        if v >= state.v_th[i] {
            spikes[i] = true;
            state.v[i] = p.v_reset;
            state.last_spike[i] = Some(now);
        } else {
            state.v[i] = v;
        }
    }
    state.time_ms = now;
    state.step += 1;
    Ok(spikes)
}

pub fn lif_step(state: &mut NetworkState, current: &[f64], p: &NeuronParams) -> Result<Vec<bool>> {
    lif_step_traced(state, current, p, None)
}

/// Relaxes every threshold toward the target, never below the floor.
pub fn adapt_thresholds(state: &mut NetworkState, p: &NeuronParams) {
    let g = p.threshold_gamma;
    for th in state.v_th.iter_mut() {
        *th = (g * *th + (1.0 - g) * p.v_target).max(p.v_th_min);
    }
}

/// Cauchy-kernel pseudo-derivative of the spike function.
pub fn surrogate_grad(v: f64, v_th: f64, alpha: f64) -> f64 {
    let x = (v - v_th) / alpha;
    1.0 / (PI * alpha) / (1.0 + x * x)
}

/// The smooth spike function whose exact derivative is [`surrogate_grad`].
pub fn surrogate_spike(v: f64, v_th: f64, alpha: f64) -> f64 {
    ((v - v_th) / alpha).atan() / PI + 0.5
}
