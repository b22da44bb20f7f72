use std::path::Path;
use std::process::{Command, Output};

fn rpp(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rpp-bci"));
    cmd.args(args).env_remove("AS_SEED");
    if let Some(s) = seed {
        cmd.env("AS_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rpp(args, None);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(path: &Path, scheme: &str, epochs_csv: &str, extra: serde_json::Value) {
    let mut cfg = serde_json::json!({
        "name": "synthetic",
        "scheme": scheme,
        "adapt_rates": [50, 100],
        "optimizer": { "epochs": 1 },
        "datasets": [{ "epochs_csv": { "path": epochs_csv, "rate_hz": 32.0, "provenance": "synthetic" } }],
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    std::fs::write(path, cfg.to_string()).unwrap();
}

#[test]
fn raw_recordings_through_preprocessing_sampling_and_embedding() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&[
        "synth", "--raw", "--subjects", "2", "--channels", "3", "--epochs-per-session", "20", "--out", s(&raw),
    ]);
    assert_eq!(std::fs::read_dir(&raw).unwrap().count(), 2 * 4 * 2);

    let epochs = dir.path().join("epochs.csv");
    ok(&["preprocess", "--input", s(&raw), "--out", s(&epochs)]);
    let text = std::fs::read_to_string(&epochs).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 4 * 20);

    let samples = dir.path().join("samples.csv");
    ok(&["sample", "--epochs", s(&epochs), "--subject", "S01", "-k", "12", "--draws", "3", "--out", s(&samples)]);
    assert_eq!(std::fs::read_to_string(&samples).unwrap().lines().count(), 1 + 3 * 12);

    let emb = dir.path().join("emb.csv");
    ok(&["embed", "--epochs", s(&epochs), "--subject", "S02", "--factor", "30", "--out", s(&emb)]);
    let text = std::fs::read_to_string(&emb).unwrap();
    assert!(text.starts_with("subject,session,index,label,pc1,pc2"));
    assert_eq!(text.lines().count(), 1 + 30);
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let epochs = dir.path().join("epochs.csv");
    ok(&["synth", "--subjects", "1", "--channels", "3", "--epochs-per-session", "30", "--out", s(&epochs)]);
    let draw = |seed: Option<&str>, name: &str| {
        let out = dir.path().join(name);
        let res = rpp(&["sample", "--epochs", s(&epochs), "-k", "10", "--out", s(&out)], seed);
        (res.status.success(), std::fs::read_to_string(out).unwrap_or_default())
    };
    let (_, a) = draw(Some("5"), "a.csv");
    let (_, b) = draw(Some("5"), "b.csv");
    let (_, c) = draw(Some("6"), "c.csv");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(!draw(Some("five"), "d.csv").0);
}

#[test]
fn train_sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let epochs = dir.path().join("epochs.csv");
    ok(&["synth", "--subjects", "3", "--channels", "4", "--epochs-per-session", "40", "--out", s(&epochs)]);

    let cfg = dir.path().join("adaptive.json");
    write_config(&cfg, "adaptive", "epochs.csv", serde_json::json!({}));
    let noas = dir.path().join("noas");
    let models = dir.path().join("models");
    ok(&["train", "--config", s(&cfg), "--out", s(&noas), "--model-dir", s(&models)]);
    for f in ["report.csv", "timings.csv", "table_synthetic_noas.csv", "manifest.json"] {
        assert!(noas.join(f).exists(), "{f} missing");
    }
    assert!(models.join("S02_adaptive_50.asmt").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(noas.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed_from_env"], false);

    let cfg_as = dir.path().join("adaptive_as.json");
    write_config(
        &cfg_as,
        "adaptive",
        "epochs.csv",
        serde_json::json!({ "use_active_sampling": true, "sample_factor": 100 }),
    );
    let with_as = dir.path().join("as");
    ok(&["train", "--config", s(&cfg_as), "--out", s(&with_as)]);

    let summary = dir.path().join("summary");
    ok(&[
        "report",
        "--reports",
        s(&noas.join("report.csv")),
        "--name",
        "synthetic",
        "--timings-noas",
        s(&noas.join("timings.csv")),
        "--timings-as",
        s(&with_as.join("timings.csv")),
        "--classes",
        "6",
        "--out",
        s(&summary),
    ]);
    let table = std::fs::read_to_string(summary.join("table_synthetic_noas.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 + 2);
    let wil: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(summary.join("wilcoxon.json")).unwrap()).unwrap();
    assert!(wil.is_object());
    assert!(summary.join("bitrate.csv").exists());

    let cfg_ind = dir.path().join("independent.json");
    write_config(&cfg_ind, "independent", "epochs.csv", serde_json::json!({}));
    let sweep = dir.path().join("sweep.csv");
    ok(&["sweep", "--config", s(&cfg_ind), "--factors", "60,90", "--out", s(&sweep)]);
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert!(text.lines().last().unwrap().starts_with("modal_best"));
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write_config(&cfg, "dependent", "missing.csv", serde_json::json!({ "sample_factr": 10 }));
    let out = rpp(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sample_factr"));
}
