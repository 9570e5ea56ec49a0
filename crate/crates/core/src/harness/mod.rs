//! Backtesting, metrics, configuration, synthetic data and the end-to-end
//! pipeline behind the command-line tool.

pub mod backtest;
pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use backtest::{backtest, rebalance_rows, BacktestResult};
pub use config::{DataSource, PipelineConfig, SyntheticConfig};
pub use metrics::{concentration_hhi, max_drawdown, rolling_sharpe, series_metrics, sparsity_stats, MetricSettings};
pub use pipeline::{report, run_pipeline, run_stages, PipelineOutput, Stage};
