use trackgame::harness::report::run_sweep;
use trackgame::harness::ExperimentConfig;
use trackgame::tracking::Strategy;

#[test]
fn dynamic_tsr_grows_with_margin() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        output_dir: dir.path().to_path_buf(),
        strategies: vec![Strategy::Dynamic],
        ..ExperimentConfig::default()
    };
    cfg.sweep.grid.insert("delta".into(), vec![0.1, 0.2, 0.4, 0.8]);
    let w = run_sweep(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    for k in &cfg.knowledge {
        let tsrs: Vec<f64> = w
            .aggregates
            .iter()
            .filter(|a| a.knowledge == *k)
            .map(|a| a.tsr.unwrap())
            .collect();
        assert_eq!(tsrs.len(), 4);
        assert!(tsrs.windows(2).all(|p| p[0] <= p[1]), "{k}: {tsrs:?}");
    }
}

#[test]
fn shipped_default_config_matches_code_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    assert_eq!(ExperimentConfig::load(path).unwrap(), ExperimentConfig::default());
}
