//! Population encoding of normalized returns into per-neuron input currents.
//!
//! Each asset owns `P` neurons with Gaussian tuning curves spread evenly over
//! the expected range of z-scored returns. On top of the tuning-curve
//! response every neuron of an asset receives the same asset-level
//! risk/return current `λ·μ + (1−λ)/σ + ξ`, where λ follows a decaying
//! risk-aversion schedule and ξ is Gaussian noise drawn once per asset per
//! timestep.

use std::io::Write;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptiveFieldBank {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    pub amplitude: f64,
}

impl ReceptiveFieldBank {
    pub fn size(&self) -> usize {
        self.centers.len()
    }

    /// Tuning-curve responses to a single normalized return.
    pub fn respond(&self, r_norm: f64) -> Vec<f64> {
        (0..self.size()).map(|j| self.response(j, r_norm)).collect()
    }

    pub fn response(&self, j: usize, r_norm: f64) -> f64 {
        let z = (r_norm - self.centers[j]) / self.widths[j];
        self.amplitude * (-0.5 * z * z).exp()
    }
}

/// `P` evenly spaced centers over `[lo, hi]`, each with width equal to the
/// spacing so neighbouring fields overlap.
pub fn build_receptive_fields(p: usize, lo: f64, hi: f64, amplitude: f64) -> Result<ReceptiveFieldBank> {
    if p < 2 {
        return Err(Error::Parameter(format!("population size must be at least 2, got {p}")));
    }
    if !(lo < hi) {
        return Err(Error::Parameter(format!("receptive field range [{lo}, {hi}] is empty")));
    }
    let spacing = (hi - lo) / (p - 1) as f64;
    Ok(ReceptiveFieldBank {
        centers: (0..p).map(|j| lo + j as f64 * spacing).collect(),
        widths: vec![spacing; p],
        amplitude,
    })
}

pub fn encode_input_current(r_norm: f64, bank: &ReceptiveFieldBank) -> Vec<f64> {
    bank.respond(r_norm)
}

pub fn risk_return_current(mu: f64, sigma: f64, lambda: f64, noise: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("volatility must be positive, got {sigma}")));
    }
    Ok(lambda * mu + (1.0 - lambda) / sigma + noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleMode {
    Exponential,
    #[default]
    Polynomial,
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(Self::Exponential),
            "polynomial" => Ok(Self::Polynomial),
            other => Err(Error::Parameter(format!("unknown schedule mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskAversionSchedule {
    pub mode: ScheduleMode,
    pub lambda0: f64,
    pub alpha_decay: f64,
    pub beta_poly: f64,
    pub t_max: f64,
}

impl Default for RiskAversionSchedule {
    fn default() -> Self {
        Self {
            mode: ScheduleMode::Polynomial,
            lambda0: 1.0,
            alpha_decay: 0.85,
            beta_poly: 1.0,
            t_max: 250.0,
        }
    }
}

pub fn lambda_at(t: f64, sched: &RiskAversionSchedule) -> Result<f64> {
    if !(0.0..=sched.t_max).contains(&t) {
        return Err(Error::Parameter(format!("step {t} outside [0, {}]", sched.t_max)));
    }
    let frac = if sched.t_max > 0.0 { t / sched.t_max } else { 0.0 };
    Ok(match sched.mode {
        ScheduleMode::Exponential => sched.lambda0 * (-sched.alpha_decay * frac).exp(),
        ScheduleMode::Polynomial => sched.lambda0 * (1.0 - frac).powf(sched.beta_poly),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingConfig {
    pub population_size: usize,
    pub range: (f64, f64),
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            population_size: 120,
            range: (-3.0, 3.0),
            amplitude: 1.0,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl EncodingConfig {
    pub fn bank(&self) -> Result<ReceptiveFieldBank> {
        build_receptive_fields(self.population_size, self.range.0, self.range.1, self.amplitude)
    }
}

/// Per-asset return and volatility summaries rescaled to unit mean magnitude
/// across the universe, so the two terms of the risk/return current are on
/// comparable scales regardless of the data frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReturnInputs {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl RiskReturnInputs {
    pub fn from_moments(mu: &[f64], sigma: &[f64]) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: sigma.len(),
            });
        }
        if let Some(i) = sigma.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::Domain(format!("asset {i} has zero volatility")));
        }
        let n = mu.len().max(1) as f64;
        let mu_scale = mu.iter().map(|m| m.abs()).sum::<f64>() / n;
        let sigma_scale = sigma.iter().sum::<f64>() / n;
        let mu_scale = if mu_scale > 0.0 { mu_scale } else { 1.0 };
        Ok(Self {
            mu: mu.iter().map(|m| m / mu_scale).collect(),
            sigma: sigma.iter().map(|s| s / sigma_scale).collect(),
        })
    }

    /// Unscaled inputs, used when the caller has already chosen units.
    pub fn raw(mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        Self { mu, sigma }
    }
}

/// Currents for every neuron at one timestep, asset-major (`asset · P + j`).
///
/// `stream` selects the noise substream; the same `(seed, stream)` pair always
/// produces the same currents. Noise is skipped entirely when
/// `noise_sigma == 0` or `with_noise` is false.
pub fn encode_timestep(
    row: &[f64],
    inputs: &RiskReturnInputs,
    bank: &ReceptiveFieldBank,
    lambda: f64,
    cfg: &EncodingConfig,
    stream: u64,
    with_noise: bool,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; row.len() * bank.size()];
    encode_timestep_into(row, inputs, bank, lambda, cfg, stream, with_noise, &mut out)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn encode_timestep_into(
    row: &[f64],
    inputs: &RiskReturnInputs,
    bank: &ReceptiveFieldBank,
    lambda: f64,
    cfg: &EncodingConfig,
    stream: u64,
    with_noise: bool,
    out: &mut [f64],
) -> Result<()> {
    let n = row.len();
    if inputs.mu.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: inputs.mu.len(),
        });
    }
    let p = bank.size();
    if out.len() != n * p {
        return Err(Error::DimensionMismatch {
            expected: n * p,
            got: out.len(),
        });
    }
    let noisy = with_noise && cfg.noise_sigma > 0.0;
    let mut gen = rng::substream(cfg.seed, stream);
    let normal = Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| Error::Parameter(e.to_string()))?;
    for i in 0..n {
        let xi = if noisy { normal.sample(&mut gen) } else { 0.0 };
        let shared = risk_return_current(inputs.mu[i], inputs.sigma[i], lambda, xi)?;
        for j in 0..p {
            out[i * p + j] = bank.response(j, row[i]) + shared;
        }
    }
    Ok(())
}

/// Debug dump of encoded currents as `t,asset,neuron,current`.
pub fn write_current_dump(mut w: impl Write, steps: &[Vec<f64>], population_size: usize) -> Result<()> {
    writeln!(w, "t,asset,neuron,current")?;
    for (t, currents) in steps.iter().enumerate() {
        for (n, c) in currents.iter().enumerate() {
            writeln!(w, "{t},{},{},{c}", n / population_size, n % population_size)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn field_spacing() {
        let b = build_receptive_fields(3, -1.0, 1.0, 1.0).unwrap();
        assert_eq!(b.centers, vec![-1.0, 0.0, 1.0]);
        assert_eq!(b.widths, vec![1.0; 3]);
        let b = build_receptive_fields(2, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(b.centers, vec![0.0, 1.0]);
        assert_eq!(b.widths, vec![1.0; 2]);
        assert!(build_receptive_fields(1, 0.0, 1.0, 1.0).is_err());
        assert!(build_receptive_fields(3, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn gaussian_response() {
        let b = build_receptive_fields(5, -2.0, 2.0, 3.0).unwrap();
        assert_eq!(b.response(2, 0.0), 3.0);
        assert!((b.response(2, 1.0) - 3.0 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((b.response(2, 1.0) / 3.0 - 0.6065).abs() < 1e-4);
        assert!(b.response(2, 10.0) < 1e-20 * 3.0);
    }

    #[test]
    fn risk_return_examples() {
        assert_eq!(risk_return_current(0.3, 0.7, 1.0, 0.0).unwrap(), 0.3);
        assert!((risk_return_current(0.3, 0.2, 0.0, 0.0).unwrap() - 5.0).abs() < 1e-12);
        assert!((risk_return_current(0.1, 0.5, 0.5, 0.0).unwrap() - 1.05).abs() < 1e-12);
        assert!(risk_return_current(0.1, 0.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn schedule_values() {
        let mut s = RiskAversionSchedule {
            t_max: 100.0,
            lambda0: 0.7,
            ..Default::default()
        };
        assert_eq!(lambda_at(0.0, &s).unwrap(), 0.7);
        assert_eq!(lambda_at(100.0, &s).unwrap(), 0.0);
        s.mode = ScheduleMode::Exponential;
        assert_eq!(lambda_at(0.0, &s).unwrap(), 0.7);
        s.lambda0 = 1.0;
        assert!((lambda_at(100.0, &s).unwrap() - (-0.85f64).exp()).abs() < 1e-15);
        assert!((lambda_at(100.0, &s).unwrap() - 0.4274).abs() < 1e-4);
        assert!(lambda_at(101.0, &s).is_err());
        assert!(lambda_at(-1.0, &s).is_err());
    }

    fn setup(noise: f64, seed: u64) -> (RiskReturnInputs, ReceptiveFieldBank, EncodingConfig) {
        let cfg = EncodingConfig {
            population_size: 4,
            noise_sigma: noise,
            seed,
            ..Default::default()
        };
        let bank = cfg.bank().unwrap();
        (RiskReturnInputs::raw(vec![0.0, 0.0], vec![1.0, 2.0]), bank, cfg)
    }

    #[test]
    fn degenerate_composition_is_pure_field() {
        let (inputs, bank, cfg) = setup(0.0, 1);
        let row = [0.3, -1.2];
        let out = encode_timestep(&row, &inputs, &bank, 1.0, &cfg, 0, true).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                assert_eq!(out[i * 4 + j], bank.response(j, row[i]));
            }
        }
        assert!(encode_timestep(&[0.0], &inputs, &bank, 1.0, &cfg, 0, true).is_err());
    }

    #[test]
    fn noise_is_seeded_and_well_scaled() {
        let (inputs, bank, cfg) = setup(0.05, 11);
        let row = [0.1, 0.2];
        let a = encode_timestep(&row, &inputs, &bank, 0.5, &cfg, 3, true).unwrap();
        let b = encode_timestep(&row, &inputs, &bank, 0.5, &cfg, 3, true).unwrap();
        assert_eq!(a, b);

        let (_, _, cfg2) = setup(0.05, 12);
        let (_, _, quiet) = setup(0.0, 0);
        let clean = encode_timestep(&row, &inputs, &bank, 0.5, &quiet, 0, true).unwrap();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0.0;
        for t in 0..5000u64 {
            let x = encode_timestep(&row, &inputs, &bank, 0.5, &cfg, t, true).unwrap();
            let y = encode_timestep(&row, &inputs, &bank, 0.5, &cfg2, t, true).unwrap();
            assert_ne!(x, y);
            for asset in 0..2 {
                let xi = x[asset * 4] - clean[asset * 4];
                // the deviation is shared by every neuron of the asset
                for j in 1..4 {
                    assert!((x[asset * 4 + j] - clean[asset * 4 + j] - xi).abs() < 1e-12);
                }
                assert!(xi.abs() < 6.0 * 0.05);
                sum += xi;
                sum_sq += xi * xi;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let sd = (sum_sq / count - mean * mean).sqrt();
        // 10⁴ draws: mean within 4 standard errors, sd within 5%
        assert!(mean.abs() < 4.0 * 0.05 / count.sqrt());
        assert!((sd / 0.05 - 1.0).abs() < 0.05);
    }

    #[test]
    fn scaled_inputs_have_unit_mean_magnitude() {
        let s = RiskReturnInputs::from_moments(&[0.001, -0.0005, 0.0002], &[0.01, 0.02, 0.03]).unwrap();
        let mean_mu: f64 = s.mu.iter().map(|m| m.abs()).sum::<f64>() / 3.0;
        let mean_sigma: f64 = s.sigma.iter().sum::<f64>() / 3.0;
        assert!((mean_mu - 1.0).abs() < 1e-12);
        assert!((mean_sigma - 1.0).abs() < 1e-12);
        assert!(RiskReturnInputs::from_moments(&[0.0], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn coverage_within_range(p in 2usize..50, r in -3.0f64..=3.0) {
            let b = build_receptive_fields(p, -3.0, 3.0, 2.0).unwrap();
            let best = b.respond(r).into_iter().fold(0.0, f64::max);
            prop_assert!(best >= 2.0 * (-0.5f64).exp() - 1e-12);
            for w in b.centers.windows(2) {
                prop_assert!(w[1] - w[0] < 2.0 * b.widths[0]);
            }
        }

        #[test]
        fn schedules_nonincreasing(
            t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0,
            alpha in 0.01f64..5.0, beta in 0.01f64..5.0,
            lambda0 in 0.0f64..=1.0, exp in any::<bool>(),
        ) {
            let s = RiskAversionSchedule {
                mode: if exp { ScheduleMode::Exponential } else { ScheduleMode::Polynomial },
                lambda0, alpha_decay: alpha, beta_poly: beta, t_max: 1.0,
            };
            let (a, b) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let la = lambda_at(a, &s).unwrap();
            let lb = lambda_at(b, &s).unwrap();
            prop_assert!(lb <= la);
            prop_assert!((0.0..=lambda0).contains(&lb));
        }

        #[test]
        fn currents_finite(row in prop::collection::vec(-1e6f64..1e6, 2), lambda in 0.0f64..=1.0) {
            let (inputs, bank, cfg) = setup(0.05, 5);
            let out = encode_timestep(&row, &inputs, &bank, lambda, &cfg, 9, true).unwrap();
            prop_assert!(out.iter().all(|x| x.is_finite()));
        }
    }
}
