use rpp_bci::experiment::{generate_raw_session, SynthP300Params};
use rpp_bci::preprocessing::io::{read_epochs_csv, write_epochs_csv};
use rpp_bci::preprocessing::{run_pipeline, PipelineConfig};

fn params() -> SynthP300Params {
    SynthP300Params {
        subjects: 1,
        channels: 4,
        epochs_per_session: 60,
        erp_amplitude_uv: 6.0,
        noise_std: 1.0,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn raw_session_to_epochs_and_back() {
    let p = params();
    let (rec, events) = generate_raw_session(&p, 0, 2, 2048.0, 250.0, 50.0).unwrap();
    let out = run_pipeline(&rec, &events, &PipelineConfig::default()).unwrap();

    let stages: Vec<&str> = out.transcript.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(stages, ["input", "bandpass", "notch", "decimate", "winsorize", "epoch"]);
    assert_eq!(out.transcript[3].rate_hz, 32.0);
    assert_eq!(out.epochs.len(), 60);
    assert_eq!(out.epochs.iter().filter(|e| e.label == 1).count(), 10);
    for e in &out.epochs {
        assert_eq!((e.channels, e.samples(), e.session), (4, 32, 2));
        assert!(e.data.iter().all(|v| v.is_finite()));
    }

    let mut buf = Vec::new();
    write_epochs_csv(&mut buf, &out.epochs).unwrap();
    let back = read_epochs_csv(buf.as_slice(), 32.0).unwrap();
    assert_eq!(back, out.epochs);
}

#[test]
fn target_response_survives_preprocessing() {
    let p = params();
    let (rec, events) = generate_raw_session(&p, 0, 1, 2048.0, 250.0, 50.0).unwrap();
    let epochs = run_pipeline(&rec, &events, &PipelineConfig::default()).unwrap().epochs;
    let centre = p.center_channel();
    // Mean over 250..350 ms on the electrode carrying the response.
    let window = |e: &rpp_bci::preprocessing::Epoch| e.channel(centre)[8..12].iter().sum::<f64>() / 4.0;
    let mean = |label: usize| {
        let v: Vec<f64> = epochs.iter().filter(|e| e.label == label).map(window).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(1) > mean(0) + 1.0, "targets {} vs non-targets {}", mean(1), mean(0));
}
