//! End-to-end orchestration and artifact writing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::{info, warn};
use ndarray::{s, Array2};

use super::backtest::{backtest, rebalance_rows, BacktestResult};
use super::config::{DataSource, PipelineConfig};
use super::metrics::{concentration_hhi, rolling_sharpe, series_metrics, sparsity_stats, MetricSettings};
use super::synth::{self, SyntheticSpec};
use crate::ann::{self, AnnOutcome};
use crate::clustering::{
    correlation_distance, correlation_matrix, select_cluster_count, select_representatives, write_cluster_report,
    write_silhouette_table, AssetSubset, ClusterAssignment, ClusterCountScore,
};
use crate::decoder::{enforce_cardinality, write_weights_csv, DecodeConfig};
use crate::error::{Error, Result};
use crate::market_data::{
    align_markets, apply_zscore, clean_universe, impute_missing, load_prices, load_universe, log_returns, zscore_normalize,
    CleanReport, ColumnStats, ReturnMatrix, DATE_FORMAT,
};
use crate::portfolio::{estimate_moments, moments_of, PortfolioWeights};
use crate::snn::{self, write_checkpoint, write_loss_history, SpikeRaster, TrainOutcome};

/// How far a pipeline invocation goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Cluster,
    TrainSnn,
    TrainAnn,
    Backtest,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub returns: ReturnMatrix,
    pub clean: CleanReport,
    pub dropped_dates: usize,
}

pub fn ingest(cfg: &PipelineConfig) -> Result<Ingested> {
    let pm = match &cfg.data {
        DataSource::Csv { prices, universe } => {
            let mut pm = load_prices(prices)?;
            if let Some(u) = universe {
                pm.assign_markets(&load_universe(u)?);
            }
            pm
        }
        DataSource::Synthetic => synth::generate(&synthetic_spec(cfg))?.prices,
    };
    let (pm, clean) = clean_universe(&pm, cfg.min_completeness)?;
    for (t, c) in &clean.dropped {
        info!("dropped {t}: completeness {c:.4}");
    }
    let (pm, dropped_dates) = align_markets(&pm);
    let pm = impute_missing(&pm, cfg.impute)?;
    Ok(Ingested {
        returns: log_returns(&pm)?,
        clean,
        dropped_dates,
    })
}

pub fn synthetic_spec(cfg: &PipelineConfig) -> SyntheticSpec {
    let s = &cfg.synthetic;
    SyntheticSpec {
        n_assets: s.n_assets,
        n_days: s.n_days,
        n_blocks: s.n_blocks,
        block_correlation: s.block_correlation,
        start: s.start,
        missing_rate: s.missing_rate,
        seed: crate::rng::derive_seed(cfg.seed, 0),
        planted: None,
        planted_drift: 0.0,
    }
}

/// Number of leading return rows used for training.
pub fn train_rows(n_rows: usize, fraction: f64) -> Result<usize> {
    let n = (n_rows as f64 * fraction).floor() as usize;
    if n < 2 || n_rows - n < 2 {
        return Err(Error::Parameter(format!(
            "a {fraction} split of {n_rows} return days leaves fewer than 2 days on one side"
        )));
    }
    Ok(n)
}

#[derive(Debug, Clone)]
pub struct GroupScores {
    pub label: String,
    pub k: usize,
    pub scores: Vec<ClusterCountScore>,
}

#[derive(Debug, Clone)]
pub struct Clustering {
    /// Labels are numbered consecutively across groups.
    pub assignment: ClusterAssignment,
    pub subset: AssetSubset,
    pub groups: Vec<GroupScores>,
}

/// Clusters each market separately (or the whole universe) and keeps one
/// representative per cluster. Groups of fewer than three assets keep every
/// asset as its own cluster.
pub fn cluster_universe(train: &ReturnMatrix, cfg: &PipelineConfig) -> Result<Clustering> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, m) in train.markets.iter().enumerate() {
        let label = match (cfg.cluster_per_market, m) {
            (true, Some(m)) => m.to_string(),
            _ => "ALL".to_string(),
        };
        groups.entry(label).or_default().push(i);
    }
    let n = train.n_assets();
    let obj = &cfg.snn.objective;
    let mut labels = vec![0; n];
    let mut asset_sharpe = vec![0.0; n];
    let mut indices = Vec::new();
    let mut skipped = Vec::new();
    let mut summaries = Vec::new();
    let mut offset = 0;
    for (label, cols) in groups {
        let sub = train.select_columns(&cols);
        let (ca, scores) = if cols.len() < 3 {
            let ca = ClusterAssignment {
                tickers: sub.tickers.clone(),
                labels: (0..cols.len()).collect(),
                k: cols.len(),
                merge_history: Vec::new(),
            };
            (ca, Vec::new())
        } else {
            let k_max = cfg.cluster_k_max.min(cols.len() - 1);
            let k_min = cfg.cluster_k_min.min(k_max);
            let dm = correlation_distance(&correlation_matrix(&sub)?);
            let (k, scores) = select_cluster_count(&dm, k_min, k_max)?;
            (crate::clustering::ward_cluster(&dm, k)?, scores)
        };
        info!("market {label}: {} assets in {} clusters", cols.len(), ca.k);
        let reps = select_representatives(&ca, &sub, obj.risk_free, obj.eps)?;
        for (local, &global) in cols.iter().enumerate() {
            labels[global] = offset + ca.labels[local];
            asset_sharpe[global] = reps.asset_sharpe[local];
        }
        indices.extend(reps.indices.iter().map(|&i| cols[i]));
        skipped.extend(reps.skipped_clusters.iter().map(|&c| offset + c));
        summaries.push(GroupScores {
            label,
            k: ca.k,
            scores,
        });
        offset += ca.k;
    }
    indices.sort_unstable();
    Ok(Clustering {
        assignment: ClusterAssignment {
            tickers: train.tickers.clone(),
            labels,
            k: offset,
            merge_history: Vec::new(),
        },
        subset: AssetSubset {
            tickers: indices.iter().map(|&i| train.tickers[i].clone()).collect(),
            indices,
            asset_sharpe,
            skipped_clusters: skipped,
        },
        groups: summaries,
    })
}

/// Everything the pipeline produced.
#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub artifacts: Vec<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }
}

/// Per-strategy backtest plus the weights chosen at each rebalance.
struct Strategy {
    name: &'static str,
    result: BacktestResult,
    initial: PortfolioWeights,
    mean_cardinality: f64,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at_stage(name))
}

/// Runs the pipeline up to and including `until`, writing artifacts to `out`.
pub fn run_stages(cfg: &PipelineConfig, out: &Path, until: Stage) -> Result<PipelineOutput> {
    stage("config", cfg.validate())?;
    std::fs::create_dir_all(out)?;
    let mut w = Writer {
        dir: out,
        written: Vec::new(),
    };
    let mut metrics = BTreeMap::new();
    w.write("config_used.txt", |f| Ok(f.write_all(cfg.to_text().as_bytes())?))?;

    let data = stage("ingest", ingest(cfg))?;
    w.write("returns.csv", |f| data.returns.write_csv(f))?;
    metrics.insert("universe_assets_retained".into(), data.clean.retained.len() as f64);
    metrics.insert("universe_assets_dropped".into(), data.clean.dropped.len() as f64);
    metrics.insert("universe_dates_dropped_by_alignment".into(), data.dropped_dates as f64);
    if until == Stage::Ingest {
        return Ok(PipelineOutput {
            artifacts: w.written,
            metrics,
        });
    }

    let all = &data.returns;
    let n_train = stage("split", train_rows(all.n_rows(), cfg.train_fraction))?;
    let train = all.slice_rows(0..n_train);
    let clusters = stage("cluster", cluster_universe(&train, cfg))?;
    w.write("clusters.csv", |f| write_cluster_report(f, &clusters.assignment, &clusters.subset))?;
    for g in &clusters.groups {
        let name = if clusters.groups.len() == 1 {
            "silhouette.csv".to_string()
        } else {
            format!("silhouette_{}.csv", g.label)
        };
        w.write(&name, |f| write_silhouette_table(f, &g.scores))?;
        metrics.insert(format!("clusters_{}", g.label), g.k as f64);
    }
    metrics.insert("selected_assets".into(), clusters.subset.indices.len() as f64);
    metrics.insert("train_days".into(), n_train as f64);
    metrics.insert("test_days".into(), (all.n_rows() - n_train) as f64);
    if until == Stage::Cluster {
        return Ok(PipelineOutput {
            artifacts: w.written,
            metrics,
        });
    }

    let sel = &clusters.subset.indices;
    let universe = all.select_columns(sel);
    let train_sub = train.select_columns(sel);
    let normalized = stage("normalize", zscore_normalize(&train_sub))?;
    let moments = stage("moments", estimate_moments(&train_sub))?;

    let want_snn = until != Stage::TrainAnn;
    let want_ann = cfg.ann_enabled && until != Stage::TrainSnn;
    // the two models share only read-only inputs
    let (snn_res, ann_res) = std::thread::scope(|scope| {
        let snn_job = want_snn.then(|| scope.spawn(|| snn::train(&normalized, &moments, &cfg.snn)));
        let ann_job = want_ann.then(|| {
            scope.spawn(|| ann::train_ann(train_sub.returns.view(), &normalized, &cfg.ann, &cfg.snn.objective))
        });
        (
            snn_job.map(|h| h.join().expect("SNN training thread panicked")),
            ann_job.map(|h| h.join().expect("ANN training thread panicked")),
        )
    });
    let snn_out = snn_res.map(|r| stage("train-snn", r)).transpose()?;
    let ann_out = ann_res.map(|r| stage("train-ann", r)).transpose()?;

    let test_start = n_train;
    let decode = snn_out
        .as_ref()
        .map_or_else(|| effective_decode(cfg, sel.len()), |o| o.network.effective_decode());
    let rebalances = rebalance_rows(all.n_rows() - n_train, cfg.rebalance_days);

    let mut strategies = Vec::new();
    if let Some(o) = &snn_out {
        w.write("loss_snn.csv", |f| write_loss_history(f, &o.history))?;
        w.write("checkpoint_snn.txt", |f| write_checkpoint(f, &o.network.state, &o.network.layout))?;
        let last = o.history.last().expect("nonempty history");
        metrics.insert("snn_final_loss".into(), last.loss.total);
        metrics.insert("snn_final_train_sharpe".into(), last.loss.sharpe);
        let (schedule, raster) = stage(
            "decode",
            snn_schedule(o, &universe, &normalized.stats, test_start, &rebalances),
        )?;
        w.write("raster.csv", |f| raster.write_csv(f, &o.network.layout))?;
        let (spikes, sparsity) = sparsity_stats(&raster);
        metrics.insert("snn_total_spikes".into(), spikes as f64);
        metrics.insert("snn_sparsity".into(), sparsity);
        strategies.push(("snn", schedule));
    }
    if let Some(o) = &ann_out {
        w.write("loss_ann.csv", |f| ann::write_loss_csv(f, &o.loss_history))?;
        metrics.insert("ann_final_loss".into(), *o.loss_history.last().expect("nonempty history"));
        let schedule = stage(
            "decode",
            ann_schedule(o, &universe, &normalized.stats, test_start, &rebalances, &decode),
        )?;
        strategies.push(("ann", schedule));
    }
    if let Some((_, schedule)) = strategies.iter().find(|(n, _)| *n == "snn") {
        w.write("weights_snn.csv", |f| write_weights_csv(f, &schedule[0].1, &decode))?;
    }
    if let Some((_, schedule)) = strategies.iter().find(|(n, _)| *n == "ann") {
        w.write("weights_ann.csv", |f| write_weights_csv(f, &schedule[0].1, &decode))?;
    }
    if until < Stage::Backtest {
        return Ok(PipelineOutput {
            artifacts: w.written,
            metrics,
        });
    }

    let test = universe.slice_rows(test_start..all.n_rows());
    strategies.push((
        "equal_weight",
        vec![(test.dates[0], PortfolioWeights::uniform(test.tickers.clone()))],
    ));
    let settings = MetricSettings {
        risk_free: cfg.snn.objective.risk_free,
        eps: cfg.snn.objective.eps,
        annualization: cfg.annualization,
    };
    let mut results = Vec::new();
    for (name, schedule) in strategies {
        let result = stage("backtest", backtest(&schedule, &test, cfg.snn.objective.transaction_cost))?;
        let mean_cardinality = schedule
            .iter()
            .map(|(_, w)| w.w.iter().filter(|&&x| x > 0.0).count() as f64)
            .sum::<f64>()
            / schedule.len() as f64;
        results.push(Strategy {
            name,
            result,
            initial: schedule[0].1.clone(),
            mean_cardinality,
        });
    }
    for s in &mut results {
        let m = stage(
            "report",
            series_metrics(s.name, &s.result.equity_curve, &s.result.turnover_series, &settings),
        )?;
        s.result.metrics = m.clone();
        metrics.extend(m);
        metrics.insert(format!("{}_hhi", s.name), concentration_hhi(&s.initial));
        metrics.insert(format!("{}_mean_cardinality", s.name), s.mean_cardinality);
    }
    w.write("equity.csv", |f| write_equity_csv(f, &test.dates, &results))?;
    w.write("rolling_sharpe.csv", |f| write_rolling_csv(f, &test.dates, &results, cfg))?;
    w.write("metrics.json", |f| write_metrics_json(f, &metrics))?;
    Ok(PipelineOutput {
        artifacts: w.written,
        metrics,
    })
}

fn effective_decode(cfg: &PipelineConfig, n: usize) -> DecodeConfig {
    let o = cfg.snn.objective.clamp_to(n);
    DecodeConfig {
        k: cfg.snn.decode.k.clamp(o.k_min, o.k_max),
        ..cfg.snn.decode.clone()
    }
}

type Schedule = Vec<(NaiveDate, PortfolioWeights)>;

/// Returns observed strictly before global row `row`.
fn history(universe: &ReturnMatrix, row: usize) -> Array2<f64> {
    universe.returns.slice(s![..row, ..]).to_owned()
}

fn snn_schedule(
    o: &TrainOutcome,
    universe: &ReturnMatrix,
    stats: &ColumnStats,
    test_start: usize,
    rebalances: &[usize],
) -> Result<(Schedule, SpikeRaster)> {
    let mut schedule = Vec::new();
    let mut first_raster = None;
    for &r in rebalances {
        let row = test_start + r;
        let past = history(universe, row);
        let sigma = moments_of(&past)?.sigma.to_vec();
        let lookback = o.network.config.steps_per_epoch.min(row);
        let recent = universe.slice_rows(row - lookback..row);
        let z = apply_zscore(&recent, stats)?;
        let (w, raster) = o.network.infer(&z.values, &sigma)?;
        first_raster.get_or_insert(raster);
        schedule.push((universe.dates[row], w));
    }
    Ok((schedule, first_raster.expect("at least one rebalance")))
}

fn ann_schedule(
    o: &AnnOutcome,
    universe: &ReturnMatrix,
    stats: &ColumnStats,
    test_start: usize,
    rebalances: &[usize],
    decode: &DecodeConfig,
) -> Result<Schedule> {
    let mut schedule = Vec::new();
    for &r in rebalances {
        let row = test_start + r;
        let m = moments_of(&history(universe, row))?;
        let last = apply_zscore(&universe.slice_rows(row - 1..row), stats)?;
        let soft = o.model.predict(
            m.mu.as_slice().unwrap(),
            m.sigma.as_slice().unwrap(),
            &last.values.row(0).to_vec(),
        )?;
        let w = enforce_cardinality(&soft.w, &soft.tickers, decode.k, decode.flush_epsilon)?;
        schedule.push((universe.dates[row], w));
    }
    Ok(schedule)
}

fn write_equity_csv(mut f: impl Write, dates: &[NaiveDate], results: &[Strategy]) -> Result<()> {
    write!(f, "t,date")?;
    for s in results {
        write!(f, ",{0}_equity,{0}_turnover", s.name)?;
    }
    writeln!(f)?;
    for t in 0..=dates.len() {
        let date = if t == 0 {
            String::new()
        } else {
            dates[t - 1].format(DATE_FORMAT).to_string()
        };
        write!(f, "{t},{date}")?;
        for s in results {
            let to = if t == 0 { 0.0 } else { s.result.turnover_series[t - 1] };
            write!(f, ",{},{}", s.result.equity_curve[t], to)?;
        }
        writeln!(f)?;
    }
    Ok(())
}

fn write_rolling_csv(mut f: impl Write, dates: &[NaiveDate], results: &[Strategy], cfg: &PipelineConfig) -> Result<()> {
    write!(f, "date")?;
    for s in results {
        write!(f, ",{}", s.name)?;
    }
    writeln!(f)?;
    if dates.len() < cfg.rolling_window {
        warn!(
            "evaluation period of {} days is shorter than the rolling window {}; rolling Sharpe left empty",
            dates.len(),
            cfg.rolling_window
        );
        return Ok(());
    }
    let o = &cfg.snn.objective;
    let series = results
        .iter()
        .map(|s| rolling_sharpe(&s.result.daily_returns, cfg.rolling_window, o.risk_free, o.eps))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..series[0].len() {
        write!(f, "{}", dates[i + cfg.rolling_window - 1].format(DATE_FORMAT))?;
        for s in &series {
            write!(f, ",{}", s[i])?;
        }
        writeln!(f)?;
    }
    Ok(())
}

fn write_metrics_json(mut f: impl Write, metrics: &BTreeMap<String, f64>) -> Result<()> {
    if let Some((k, v)) = metrics.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Degenerate(format!("metric {k} is not finite ({v})")));
    }
    serde_json::to_writer_pretty(&mut f, metrics).map_err(|e| Error::Io(e.into()))?;
    writeln!(f)?;
    Ok(())
}

/// Recomputes the series metrics from `equity.csv` in `dir` and compares
/// them with `metrics.json`. Returns the recomputed values and the largest
/// absolute difference.
pub fn report(dir: &Path, cfg: &PipelineConfig) -> Result<(BTreeMap<String, f64>, f64)> {
    let mut reader = csv::Reader::from_path(dir.join("equity.csv"))?;
    let headers = reader.headers()?.clone();
    let names: Vec<String> = headers
        .iter()
        .filter_map(|h| h.strip_suffix("_equity").map(str::to_string))
        .collect();
    let mut equity: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut turnover: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        for name in &names {
            let col = |suffix: &str| -> Result<f64> {
                let idx = headers
                    .iter()
                    .position(|h| h == format!("{name}_{suffix}"))
                    .ok_or_else(|| Error::Config(format!("equity.csv lacks {name}_{suffix}")))?;
                record[idx]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number '{}' in equity.csv", &record[idx])))
            };
            equity.entry(name).or_default().push(col("equity")?);
            let t = col("turnover")?;
            if &record[0] != "0" {
                turnover.entry(name).or_default().push(t);
            }
        }
    }
    let settings = MetricSettings {
        risk_free: cfg.snn.objective.risk_free,
        eps: cfg.snn.objective.eps,
        annualization: cfg.annualization,
    };
    let mut recomputed = BTreeMap::new();
    for name in &names {
        let to = turnover.get(name.as_str()).cloned().unwrap_or_default();
        recomputed.extend(series_metrics(name, &equity[name.as_str()], &to, &settings)?);
    }
    let text = std::fs::read_to_string(dir.join("metrics.json"))?;
    let stored: BTreeMap<String, f64> =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("metrics.json: {e}")))?;
    let mut worst = 0.0f64;
    for (k, v) in &recomputed {
        let s = stored
            .get(k)
            .ok_or_else(|| Error::Config(format!("metrics.json lacks {k}")))?;
        worst = worst.max((s - v).abs());
    }
    Ok((recomputed, worst))
}

/// Loads the config (applying a seed override) and runs everything.
pub fn run_pipeline(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<PipelineOutput> {
    let mut cfg = stage("config", PipelineConfig::from_file(config_path))?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    run_stages(&cfg, out, Stage::Backtest)
}
