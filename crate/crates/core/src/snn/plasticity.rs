use super::StdpParams;

/// Pair-based STDP weight change for `Δt = t_post − t_pre` (ms).
/// Simultaneous spikes leave the weight unchanged.
pub fn stdp_delta(t_pre: f64, t_post: f64, p: &StdpParams) -> f64 {
    let dt = t_post - t_pre;
    if dt > 0.0 {
        p.a_plus * (-dt / p.tau_plus).exp()
    } else if dt < 0.0 {
        -p.a_minus * (dt / p.tau_minus).exp()
    } else {
        0.0
    }
}

/// Nearest-neighbour STDP bookkeeping for one synapse per neuron.
///
/// The presynaptic side of neuron `n`'s input synapse fires whenever the
/// afferent receptive field is strongly driven; the postsynaptic side is the
/// neuron's own spike. Each post spike pairs with the latest earlier pre
/// event (potentiation), each pre event with the latest earlier post spike
/// (depression).
#[derive(Debug, Clone, PartialEq)]
pub struct StdpTrace {
    last_pre: Vec<Option<f64>>,
    last_post: Vec<Option<f64>>,
    pub delta: Vec<f64>,
}

impl StdpTrace {
    pub fn new(n: usize) -> Self {
        Self {
            last_pre: vec![None; n],
            last_post: vec![None; n],
            delta: vec![0.0; n],
        }
    }

    pub fn record(&mut self, t: f64, pre: &[bool], post: &[bool], p: &StdpParams) {
        for n in 0..self.delta.len() {
            if post[n] {
                if let Some(tp) = self.last_pre[n] {
                    self.delta[n] += stdp_delta(tp, t, p);
                }
            }
            if pre[n] {
                if let Some(tq) = self.last_post[n] {
                    self.delta[n] += stdp_delta(t, tq, p);
                }
            }
        }
        for n in 0..self.delta.len() {
            if pre[n] {
                self.last_pre[n] = Some(t);
            }
            if post[n] {
                self.last_post[n] = Some(t);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_values() {
        let p = StdpParams::default();
        assert!((stdp_delta(0.0, 20.0, &p) - p.a_plus * (-1.0f64).exp()).abs() < 1e-15);
        assert!((stdp_delta(0.0, 20.0, &p) / p.a_plus - 0.3679).abs() < 1e-4);
        assert!((stdp_delta(20.0, 0.0, &p) + p.a_minus * (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(stdp_delta(3.0, 3.0, &p), 0.0);
    }

    #[test]
    fn trace_pairs_nearest_events() {
        let p = StdpParams::default();
        let mut tr = StdpTrace::new(1);
        tr.record(1.0, &[true], &[false], &p);
        tr.record(3.0, &[false], &[true], &p);
        assert!((tr.delta[0] - stdp_delta(1.0, 3.0, &p)).abs() < 1e-15);
        tr.record(4.0, &[true], &[false], &p);
        let expect = stdp_delta(1.0, 3.0, &p) + stdp_delta(4.0, 3.0, &p);
        assert!((tr.delta[0] - expect).abs() < 1e-15);
        // coincident pre and post contribute nothing from each other
        let mut tr = StdpTrace::new(1);
        tr.record(2.0, &[true], &[true], &p);
        assert_eq!(tr.delta[0], 0.0);
    }

    proptest! {
        #[test]
        fn causal_order_sets_sign(t in -1e3f64..1e3, d in 1e-6f64..200.0) {
            let p = StdpParams::default();
            prop_assert!(stdp_delta(t, t + d, &p) > 0.0);
            prop_assert!(stdp_delta(t + d, t, &p) < 0.0);
        }
    }
}
