//! Flat `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown or repeated keys are errors. [`PipelineConfig::to_text`]
//! writes every key, so its output is a complete, re-readable config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::ann::MlpConfig;
use crate::encoding::ScheduleMode;
use crate::error::{Error, Result};
use crate::market_data::{ImputeMode, DATE_FORMAT};
use crate::snn::SnnConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv { prices: PathBuf, universe: Option<PathBuf> },
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_assets: usize,
    pub n_days: usize,
    pub n_blocks: usize,
    pub block_correlation: f64,
    pub start: NaiveDate,
    pub missing_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_assets: 24,
            n_days: 600,
            n_blocks: 6,
            block_correlation: 0.6,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            missing_rate: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataSource,
    pub synthetic: SyntheticConfig,
    pub min_completeness: f64,
    pub impute: ImputeMode,
    pub train_fraction: f64,
    pub cluster_k_min: usize,
    pub cluster_k_max: usize,
    pub cluster_per_market: bool,
    pub snn: SnnConfig,
    pub ann_enabled: bool,
    pub ann: MlpConfig,
    pub rebalance_days: usize,
    pub rolling_window: usize,
    pub annualization: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataSource::Synthetic,
            synthetic: SyntheticConfig::default(),
            min_completeness: 0.95,
            impute: ImputeMode::ForwardFill,
            train_fraction: 0.8,
            cluster_k_min: 2,
            cluster_k_max: 10,
            cluster_per_market: true,
            snn: SnnConfig::default(),
            ann_enabled: true,
            ann: MlpConfig::default(),
            rebalance_days: 21,
            rolling_window: 40,
            annualization: 252.0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Validation {
        line,
        message: format!("invalid value '{value}' for {key}"),
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Validation {
            line,
            message: format!("invalid boolean '{value}' for {key}"),
        }),
    }
}

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Validation { line, message } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })?;
        // relative data paths are resolved against the config's directory
        if let DataSource::Csv { prices, universe } = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new("."));
            if prices.is_relative() {
                *prices = base.join(&*prices);
            }
            if let Some(u) = universe.as_mut().filter(|u| u.is_relative()) {
                *u = base.join(&*u);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        let mut prices: Option<PathBuf> = None;
        let mut universe: Option<PathBuf> = None;
        let mut source = "synthetic".to_string();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Validation {
                line,
                message: format!("expected 'key = value', found '{content}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), line) {
                return Err(Error::Validation {
                    line,
                    message: format!("key '{key}' already set on line {prev}"),
                });
            }
            macro_rules! set {
                ($field:expr) => {
                    $field = parse_value(key, value, line)?
                };
            }
            let s = &mut cfg.snn;
            match key {
                "seed" => set!(cfg.seed),
                "data_source" => source = value.to_string(),
                "prices_path" => prices = Some(PathBuf::from(value)),
                "universe_path" => universe = Some(PathBuf::from(value)),
                "synthetic_assets" => set!(cfg.synthetic.n_assets),
                "synthetic_days" => set!(cfg.synthetic.n_days),
                "synthetic_blocks" => set!(cfg.synthetic.n_blocks),
                "synthetic_block_correlation" => set!(cfg.synthetic.block_correlation),
                "synthetic_missing_rate" => set!(cfg.synthetic.missing_rate),
                "synthetic_start" => {
                    cfg.synthetic.start = NaiveDate::parse_from_str(value, DATE_FORMAT).map_err(|_| Error::Validation {
                        line,
                        message: format!("invalid date '{value}' for {key}"),
                    })?
                }
                "min_completeness" => set!(cfg.min_completeness),
                "impute" => set!(cfg.impute),
                "train_fraction" => set!(cfg.train_fraction),
                "cluster_k_min" => set!(cfg.cluster_k_min),
                "cluster_k_max" => set!(cfg.cluster_k_max),
                "cluster_per_market" => cfg.cluster_per_market = parse_bool(key, value, line)?,
                "population_size" => set!(s.encoding.population_size),
                "encoding_range_lo" => set!(s.encoding.range.0),
                "encoding_range_hi" => set!(s.encoding.range.1),
                "receptive_amplitude" => set!(s.encoding.amplitude),
                "noise_sigma" => set!(s.encoding.noise_sigma),
                "tau_m" => set!(s.neuron.tau_m),
                "dt" => set!(s.neuron.dt),
                "v_rest" => set!(s.neuron.v_rest),
                "v_reset" => set!(s.neuron.v_reset),
                "v_target" => set!(s.neuron.v_target),
                "v_th_init" => set!(s.neuron.v_th_init),
                "v_th_min" => set!(s.neuron.v_th_min),
                "r_m" => set!(s.neuron.r_m),
                "threshold_gamma" => set!(s.neuron.threshold_gamma),
                "stdp_a_plus" => set!(s.stdp.a_plus),
                "stdp_a_minus" => set!(s.stdp.a_minus),
                "stdp_tau_plus" => set!(s.stdp.tau_plus),
                "stdp_tau_minus" => set!(s.stdp.tau_minus),
                "surrogate_alpha" => set!(s.surrogate_alpha),
                "inhibition_beta" => set!(s.inhibition_beta),
                "theta_lat" => set!(s.theta_lat),
                "epochs" => set!(s.epochs),
                "steps_per_epoch" => set!(s.steps_per_epoch),
                "learning_rate" => set!(s.learning_rate),
                "lr_decay" => set!(s.lr_decay),
                "stdp_rate" => set!(s.stdp_rate),
                "syn_init" => set!(s.syn_init),
                "noise_at_inference" => s.noise_at_inference = parse_bool(key, value, line)?,
                "schedule" => set!(s.schedule.mode),
                "lambda0" => set!(s.schedule.lambda0),
                "alpha_decay" => set!(s.schedule.alpha_decay),
                "beta_poly" => set!(s.schedule.beta_poly),
                "decode_window" => {
                    s.decode.window = if value == "full" {
                        None
                    } else {
                        Some(parse_value(key, value, line)?)
                    }
                }
                "risk_gamma" => set!(s.decode.risk_gamma),
                "k" => set!(s.decode.k),
                "flush_epsilon" => set!(s.decode.flush_epsilon),
                "k_min" => set!(s.objective.k_min),
                "k_max" => set!(s.objective.k_max),
                "risk_free" => set!(s.objective.risk_free),
                "sharpe_eps" => set!(s.objective.eps),
                "transaction_cost" => set!(s.objective.transaction_cost),
                "loss_w_sharpe" => set!(s.objective.loss_weights[0]),
                "loss_w_txcost" => set!(s.objective.loss_weights[1]),
                "loss_w_cardinality" => set!(s.objective.loss_weights[2]),
                "loss_w_diversity" => set!(s.objective.loss_weights[3]),
                "ann_enabled" => cfg.ann_enabled = parse_bool(key, value, line)?,
                "ann_hidden" => set!(cfg.ann.hidden_size),
                "ann_epochs" => set!(cfg.ann.epochs),
                "ann_learning_rate" => set!(cfg.ann.learning_rate),
                "ann_batch_size" => set!(cfg.ann.batch_size),
                "ann_dropout" => set!(cfg.ann.dropout_rate),
                "ann_window" => set!(cfg.ann.window),
                "rebalance_days" => set!(cfg.rebalance_days),
                "rolling_window" => set!(cfg.rolling_window),
                "annualization" => set!(cfg.annualization),
                _ => {
                    return Err(Error::Validation {
                        line,
                        message: format!("unknown key '{key}'"),
                    })
                }
            }
        }
        cfg.data = match source.as_str() {
            "synthetic" => DataSource::Synthetic,
            "csv" => DataSource::Csv {
                prices: prices.ok_or_else(|| Error::Config("data_source = csv requires prices_path".into()))?,
                universe,
            },
            other => return Err(Error::Config(format!("unknown data_source '{other}' (expected csv or synthetic)"))),
        };
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the master seed and the seeds derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.snn.encoding.seed = crate::rng::derive_seed(seed, 1);
        self.ann.seed = crate::rng::derive_seed(seed, 2);
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.snn.objective;
        if o.k_max < o.k_min {
            return Err(Error::Config(format!(
                "k_max ({}) must not be smaller than k_min ({})",
                o.k_max, o.k_min
            )));
        }
        if self.cluster_k_max < self.cluster_k_min || self.cluster_k_min < 2 {
            return Err(Error::Config(format!(
                "cluster count range needs 2 <= cluster_k_min ({}) <= cluster_k_max ({})",
                self.cluster_k_min, self.cluster_k_max
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        if self.rebalance_days == 0 || self.rolling_window < 2 || !(self.annualization > 0.0) {
            return Err(Error::Config(
                "rebalance_days must be positive, rolling_window at least 2 and annualization positive".into(),
            ));
        }
        let syn = &self.synthetic;
        if syn.n_assets < 2 || syn.n_blocks == 0 || syn.n_blocks > syn.n_assets || syn.n_days < 10 {
            return Err(Error::Config(
                "synthetic data needs at least 2 assets, 1..=n_assets blocks and 10 days".into(),
            ));
        }
        if !(0.0..1.0).contains(&syn.block_correlation) || !(0.0..0.5).contains(&syn.missing_rate) {
            return Err(Error::Config(
                "synthetic_block_correlation must lie in [0, 1) and synthetic_missing_rate in [0, 0.5)".into(),
            ));
        }
        self.snn.validate()?;
        self.ann.validate()?;
        Ok(())
    }

    /// Every key with its current value.
    pub fn to_text(&self) -> String {
        let s = &self.snn;
        let o = &s.objective;
        let mut lines: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| lines.push((k.to_string(), v));
        put("seed", self.seed.to_string());
        match &self.data {
            DataSource::Synthetic => put("data_source", "synthetic".into()),
            DataSource::Csv { prices, universe } => {
                put("data_source", "csv".into());
                put("prices_path", prices.display().to_string());
                if let Some(u) = universe {
                    put("universe_path", u.display().to_string());
                }
            }
        }
        put("synthetic_assets", self.synthetic.n_assets.to_string());
        put("synthetic_days", self.synthetic.n_days.to_string());
        put("synthetic_blocks", self.synthetic.n_blocks.to_string());
        put("synthetic_block_correlation", self.synthetic.block_correlation.to_string());
        put("synthetic_missing_rate", self.synthetic.missing_rate.to_string());
        put("synthetic_start", self.synthetic.start.format(DATE_FORMAT).to_string());
        put("min_completeness", self.min_completeness.to_string());
        put(
            "impute",
            match self.impute {
                ImputeMode::ForwardFill => "ffill".into(),
                ImputeMode::Linear => "linear".into(),
            },
        );
        put("train_fraction", self.train_fraction.to_string());
        put("cluster_k_min", self.cluster_k_min.to_string());
        put("cluster_k_max", self.cluster_k_max.to_string());
        put("cluster_per_market", self.cluster_per_market.to_string());
        put("population_size", s.encoding.population_size.to_string());
        put("encoding_range_lo", s.encoding.range.0.to_string());
        put("encoding_range_hi", s.encoding.range.1.to_string());
        put("receptive_amplitude", s.encoding.amplitude.to_string());
        put("noise_sigma", s.encoding.noise_sigma.to_string());
        put("tau_m", s.neuron.tau_m.to_string());
        put("dt", s.neuron.dt.to_string());
        put("v_rest", s.neuron.v_rest.to_string());
        put("v_reset", s.neuron.v_reset.to_string());
        put("v_target", s.neuron.v_target.to_string());
        put("v_th_init", s.neuron.v_th_init.to_string());
        put("v_th_min", s.neuron.v_th_min.to_string());
        put("r_m", s.neuron.r_m.to_string());
        put("threshold_gamma", s.neuron.threshold_gamma.to_string());
        put("stdp_a_plus", s.stdp.a_plus.to_string());
        put("stdp_a_minus", s.stdp.a_minus.to_string());
        put("stdp_tau_plus", s.stdp.tau_plus.to_string());
        put("stdp_tau_minus", s.stdp.tau_minus.to_string());
        put("surrogate_alpha", s.surrogate_alpha.to_string());
        put("inhibition_beta", s.inhibition_beta.to_string());
        put("theta_lat", s.theta_lat.to_string());
        put("epochs", s.epochs.to_string());
        put("steps_per_epoch", s.steps_per_epoch.to_string());
        put("learning_rate", s.learning_rate.to_string());
        put("lr_decay", s.lr_decay.to_string());
        put("stdp_rate", s.stdp_rate.to_string());
        put("syn_init", s.syn_init.to_string());
        put("noise_at_inference", s.noise_at_inference.to_string());
        put(
            "schedule",
            match s.schedule.mode {
                ScheduleMode::Exponential => "exponential".into(),
                ScheduleMode::Polynomial => "polynomial".into(),
            },
        );
        put("lambda0", s.schedule.lambda0.to_string());
        put("alpha_decay", s.schedule.alpha_decay.to_string());
        put("beta_poly", s.schedule.beta_poly.to_string());
        put("decode_window", s.decode.window.map_or_else(|| "full".into(), |w| w.to_string()));
        put("risk_gamma", s.decode.risk_gamma.to_string());
        put("k", s.decode.k.to_string());
        put("flush_epsilon", s.decode.flush_epsilon.to_string());
        put("k_min", o.k_min.to_string());
        put("k_max", o.k_max.to_string());
        put("risk_free", o.risk_free.to_string());
        put("sharpe_eps", o.eps.to_string());
        put("transaction_cost", o.transaction_cost.to_string());
        put("loss_w_sharpe", o.loss_weights[0].to_string());
        put("loss_w_txcost", o.loss_weights[1].to_string());
        put("loss_w_cardinality", o.loss_weights[2].to_string());
        put("loss_w_diversity", o.loss_weights[3].to_string());
        put("ann_enabled", self.ann_enabled.to_string());
        put("ann_hidden", self.ann.hidden_size.to_string());
        put("ann_epochs", self.ann.epochs.to_string());
        put("ann_learning_rate", self.ann.learning_rate.to_string());
        put("ann_batch_size", self.ann.batch_size.to_string());
        put("ann_dropout", self.ann.dropout_rate.to_string());
        put("ann_window", self.ann.window.to_string());
        put("rebalance_days", self.rebalance_days.to_string());
        put("rolling_window", self.rolling_window.to_string());
        put("annualization", self.annualization.to_string());
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
