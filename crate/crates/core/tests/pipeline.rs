use std::fs;
use std::path::{Path, PathBuf};

use spikefolio::harness::synth::{generate, write_prices_csv, write_universe_csv, SyntheticSpec};
use spikefolio::harness::{report, run_pipeline, run_stages, PipelineConfig, Stage};
use spikefolio::snn::read_checkpoint;
use spikefolio::Error;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic.conf")
}

fn fixture_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::from_file(fixture()).unwrap();
    cfg.set_seed(cfg.seed);
    cfg
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&fixture(), dir.path(), None).unwrap();
    for name in [
        "config_used.txt",
        "returns.csv",
        "clusters.csv",
        "silhouette_IN.csv",
        "silhouette_US.csv",
        "loss_snn.csv",
        "checkpoint_snn.txt",
        "raster.csv",
        "loss_ann.csv",
        "weights_snn.csv",
        "weights_ann.csv",
        "equity.csv",
        "rolling_sharpe.csv",
        "metrics.json",
    ] {
        let p = dir.path().join(name);
        assert!(p.is_file(), "{name} missing");
        assert!(out.artifacts.contains(&p), "{name} not reported");
    }
    for key in [
        "snn_sharpe_daily",
        "ann_sharpe_daily",
        "equal_weight_sharpe_daily",
        "snn_sparsity",
        "snn_total_spikes",
        "selected_assets",
        "clusters_IN",
        "clusters_US",
    ] {
        assert!(out.metrics.contains_key(key), "metric {key} missing");
    }

    let cfg = fixture_config();
    let loss_rows = fs::read_to_string(dir.path().join("loss_snn.csv")).unwrap().lines().count();
    assert_eq!(loss_rows, cfg.snn.epochs + 1);
    let loss_rows = fs::read_to_string(dir.path().join("loss_ann.csv")).unwrap().lines().count();
    assert_eq!(loss_rows, cfg.ann.epochs + 1);
    let equity = fs::read_to_string(dir.path().join("equity.csv")).unwrap();
    assert_eq!(equity.lines().count(), out.metrics["test_days"] as usize + 2);
}

#[test]
fn report_recomputes_stored_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&fixture(), dir.path(), None).unwrap();
    let (recomputed, worst) = report(dir.path(), &fixture_config()).unwrap();
    assert!(worst <= 1e-9, "report drifted by {worst}");
    for (k, v) in &recomputed {
        assert!((out.metrics[k] - v).abs() <= 1e-9, "{k}");
    }
}

#[test]
fn seed_override_changes_results_and_is_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    run_pipeline(&fixture(), a.path(), Some(11)).unwrap();
    run_pipeline(&fixture(), b.path(), Some(11)).unwrap();
    run_pipeline(&fixture(), c.path(), None).unwrap();
    let read = |d: &Path| fs::read(d.join("metrics.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
    let used = fs::read_to_string(a.path().join("config_used.txt")).unwrap();
    assert!(used.lines().any(|l| l.trim() == "seed = 11"));
}

#[test]
fn checkpoint_matches_selected_universe() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&fixture(), dir.path(), None).unwrap();
    let f = fs::File::open(dir.path().join("checkpoint_snn.txt")).unwrap();
    let (layout, state) = read_checkpoint(std::io::BufReader::new(f)).unwrap();
    assert_eq!(layout.n_assets, out.metrics["selected_assets"] as usize);
    assert_eq!(layout.size, fixture_config().snn.encoding.population_size);
    assert_eq!(state.w_syn.len(), layout.n_neurons());
    assert!(state.w_syn.iter().all(|w| *w >= 0.0 && w.is_finite()));
}

#[test]
fn stages_stop_where_asked() {
    let cfg = fixture_config();
    let dir = tempfile::tempdir().unwrap();
    let out = run_stages(&cfg, dir.path(), Stage::Ingest).unwrap();
    assert!(dir.path().join("returns.csv").is_file());
    assert!(!dir.path().join("clusters.csv").exists());
    assert!(out.metrics.contains_key("universe_assets_retained"));

    let dir = tempfile::tempdir().unwrap();
    run_stages(&cfg, dir.path(), Stage::TrainAnn).unwrap();
    assert!(dir.path().join("loss_ann.csv").is_file());
    assert!(!dir.path().join("loss_snn.csv").exists());
    assert!(!dir.path().join("metrics.json").exists());

    let dir = tempfile::tempdir().unwrap();
    run_stages(&cfg, dir.path(), Stage::TrainSnn).unwrap();
    assert!(dir.path().join("raster.csv").is_file());
    assert!(!dir.path().join("loss_ann.csv").exists());
}

#[test]
fn inverted_cardinality_bounds_are_rejected() {
    let err = PipelineConfig::parse("k_min = 12\nk_max = 5\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("12") && msg.contains('5'), "{msg}");
}

#[test]
fn unknown_config_keys_are_reported_with_line() {
    let err = PipelineConfig::parse("seed = 1\n\nrebalance_dayz = 5\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 3") && msg.contains("rebalance_dayz"), "{msg}");
}

#[test]
fn csv_source_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&SyntheticSpec {
        n_assets: 10,
        n_days: 300,
        n_blocks: 2,
        missing_rate: 0.003,
        seed: 21,
        ..SyntheticSpec::default()
    })
    .unwrap();
    write_prices_csv(fs::File::create(dir.path().join("prices.csv")).unwrap(), &data.prices).unwrap();
    write_universe_csv(fs::File::create(dir.path().join("universe.csv")).unwrap(), &data.universe).unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        "data_source = csv\nprices_path = prices.csv\nuniverse_path = universe.csv\n\
         cluster_k_max = 3\npopulation_size = 10\nepochs = 5\nsteps_per_epoch = 20\n\
         ann_epochs = 5\nrolling_window = 20\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run_pipeline(&conf, &out_dir, None).unwrap();
    assert_eq!(out.metrics["universe_assets_retained"], 10.0);
    assert!(out_dir.join("metrics.json").is_file());
}

#[test]
fn stage_failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "data_source = csv\nprices_path = nowhere.csv\n").unwrap();
    let err = run_pipeline(&conf, &dir.path().join("out"), None).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "ingest", .. }), "{err}");
}
