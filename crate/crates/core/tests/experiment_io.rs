use rpp_bci::experiment::{
    generate_synthetic, load_config, read_report_csv, run_experiment_on, write_report_files, DatasetSource,
    ExperimentConfig, Manifest, Scheme, SynthP300Params,
};

fn config(scheme: Scheme) -> (ExperimentConfig, SynthP300Params) {
    let params = SynthP300Params {
        subjects: 3,
        channels: 4,
        epochs_per_session: 48,
        seed: 8,
        ..Default::default()
    };
    let mut cfg = ExperimentConfig::new(scheme, vec![DatasetSource::Synthetic(params.clone())]);
    cfg.name = "synthetic".into();
    cfg.optimizer.epochs = 2;
    cfg.adapt_rates = vec![20, 60, 100];
    (cfg, params)
}

#[test]
fn report_files_are_complete_and_reproducible() {
    let (cfg, params) = config(Scheme::Adaptive);
    let data = generate_synthetic(&params).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let report = run_experiment_on(&cfg, &data).unwrap();
    assert_eq!(report.rows.len(), 3 * 3);
    let written = write_report_files(dir.path(), &cfg, &report, false).unwrap();
    let names: Vec<String> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["report.csv", "timings.csv", "table_synthetic_noas.csv", "manifest.json"]);

    let rows = read_report_csv(std::fs::File::open(dir.path().join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows, report.rows);

    let manifest: Manifest =
        serde_json::from_reader(std::fs::File::open(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config_sha256, cfg.hash());
    assert_eq!(manifest.subjects, ["S01", "S02", "S03"]);
    assert_eq!(manifest.files.len(), 3);

    let first = std::fs::read(dir.path().join("report.csv")).unwrap();
    let again = run_experiment_on(&cfg, &data).unwrap();
    let other = tempfile::tempdir().unwrap();
    write_report_files(other.path(), &cfg, &again, false).unwrap();
    assert_eq!(std::fs::read(other.path().join("report.csv")).unwrap(), first);
}

#[test]
fn config_files_round_trip_and_reject_unknown_keys() {
    let (cfg, _) = config(Scheme::Independent);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let (loaded, _) = load_config(&path).unwrap();
    assert_eq!(loaded.scheme, cfg.scheme);
    assert_eq!(loaded.optimizer, cfg.optimizer);

    let mut value: serde_json::Value = serde_json::to_value(&cfg).unwrap();
    value["learning_rte"] = serde_json::json!(0.1);
    std::fs::write(&path, value.to_string()).unwrap();
    assert!(load_config(&path).is_err());

    let mut seeded = cfg.clone();
    assert!(seeded.apply_seed_override(Some("41")).unwrap());
    assert_eq!(seeded.seed, 41);
    assert_ne!(seeded.hash(), cfg.hash());
    assert!(!seeded.apply_seed_override(None).unwrap());
    assert!(seeded.apply_seed_override(Some("minus one")).is_err());
}

#[test]
fn active_sampling_shrinks_every_training_set() {
    let (mut cfg, params) = config(Scheme::Independent);
    let data = generate_synthetic(&params).unwrap();
    let plain = run_experiment_on(&cfg, &data).unwrap();
    cfg.use_active_sampling = true;
    cfg.sample_factor = 120;
    let sampled = run_experiment_on(&cfg, &data).unwrap();
    for (a, b) in plain.rows.iter().zip(&sampled.rows) {
        assert_eq!(a.test_count, b.test_count);
        assert!(b.train_count + b.val_count < a.train_count + a.val_count);
        assert_eq!(b.train_count + b.val_count, 2 * 120);
    }
    assert!(sampled.total_sampling_seconds() > 0.0);
}
