//! `rpp-bci` command line: synthetic data, preprocessing, active sampling,
//! training runs, sampling-factor sweeps, report aggregation and 2-D
//! embeddings. Outputs are CSV, plus a JSON manifest for training runs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rpp_bci::experiment::{
    generate_raw_session, generate_synthetic, load_config, load_datasets, merge_rows, pca_embed, read_report_csv,
    reduce_pool, run_experiment_with, sampling_factor_sweep, subject_id, write_embedding_csv, write_report_files,
    write_sweep_csv, ActiveSamplingConfig, SynthP300Params, DEFAULT_FACTORS, SEED_ENV,
};
use rpp_bci::preprocessing::io::{read_epochs_csv, read_recording_dir, write_epochs_csv, write_recording_files};
use rpp_bci::preprocessing::{run_pipeline, Epoch, PipelineConfig};
use rpp_bci::sampling::{write_samples_csv, LabeledPoint, PdsVariant, RadiusPolicy};
use rpp_bci::stats::{
    aggregate, bitrate, summary_file_name, wilcoxon_signed_rank, write_summary_csv, PairedSamples, StdKind,
};

#[derive(Parser)]
#[command(name = "rpp-bci", version, about = "Active sampling for P300 classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Dense,
    Vanilla,
}

impl From<Variant> for PdsVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Dense => PdsVariant::Dense,
            Variant::Vanilla => PdsVariant::Vanilla,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Std {
    Sample,
    Population,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic P300 dataset as an epoch CSV, or as raw recordings.
    Synth {
        /// JSON file with generator parameters; flags below override it.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        epochs_per_session: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Epoch CSV, or a directory when `--raw` is given.
        #[arg(long, short)]
        out: PathBuf,
        /// Emit continuous recordings with event files instead of epochs.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 2048.0)]
        raw_rate: f64,
        #[arg(long, default_value_t = 400.0)]
        interval_ms: f64,
        #[arg(long, default_value_t = 50.0)]
        mains: f64,
    },
    /// Filter, decimate, winsorize and cut every recording in a directory.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// JSON pipeline configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Mains frequency for the notch filter.
        #[arg(long)]
        mains: Option<f64>,
        /// Rate of the recordings' stimulus onsets, when it differs from
        /// the recording rate.
        #[arg(long)]
        event_rate: Option<f64>,
    },
    /// Draw Poisson-disk samples from the epochs of one subject.
    Sample {
        #[arg(long)]
        epochs: PathBuf,
        #[arg(long, default_value_t = 32.0)]
        rate: f64,
        /// Restrict to this subject; all epochs otherwise.
        #[arg(long)]
        subject: Option<String>,
        #[arg(long, short = 'k')]
        k: usize,
        #[arg(long, value_enum, default_value = "dense")]
        variant: Variant,
        #[arg(long, default_value_t = 1)]
        draws: usize,
        /// Fixed radius; the 10% nearest-neighbour quantile otherwise.
        #[arg(long)]
        r0: Option<f64>,
        #[arg(long, default_value_t = 5)]
        k_neighbors: usize,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the experiment described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Also save every trained model here.
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Leave-one-subject-out accuracy at several sampling factors.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<usize>>,
    },
    /// Summarise report CSVs into one table; optionally compare two timing
    /// files with the Wilcoxon signed-rank test.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "experiment")]
        name: String,
        #[arg(long, value_enum, default_value = "sample")]
        std: Std,
        #[arg(long, short)]
        out: PathBuf,
        /// Timings without active sampling.
        #[arg(long, requires = "timings_as")]
        timings_noas: Option<PathBuf>,
        /// Timings with active sampling.
        #[arg(long)]
        timings_as: Option<PathBuf>,
        /// Also write bits per decision at every mean accuracy for this
        /// many classes.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Principal-component coordinates of a subject's epochs, before or
    /// after active sampling.
    Embed {
        #[arg(long)]
        epochs: PathBuf,
        #[arg(long, default_value_t = 32.0)]
        rate: f64,
        #[arg(long)]
        subject: Option<String>,
        /// Reduce to this many epochs with dense PDS first.
        #[arg(long)]
        factor: Option<usize>,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_epochs(path: &Path, rate: f64, subject: Option<&str>) -> Result<Vec<Epoch>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut epochs = read_epochs_csv(BufReader::new(f), rate)?;
    if let Some(s) = subject {
        epochs.retain(|e| e.subject == s);
        if epochs.is_empty() {
            bail!("no epochs for subject {s} in {}", path.display());
        }
    }
    Ok(epochs)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth {
            params,
            subjects,
            channels,
            epochs_per_session,
            seed,
            out,
            raw,
            raw_rate,
            interval_ms,
            mains,
        } => {
            let mut p: SynthP300Params = match params {
                Some(path) => read_json(&path)?,
                None => SynthP300Params::default(),
            };
            p.subjects = subjects.unwrap_or(p.subjects);
            p.channels = channels.unwrap_or(p.channels);
            p.epochs_per_session = epochs_per_session.unwrap_or(p.epochs_per_session);
            p.seed = seed.unwrap_or(p.seed);
            if raw {
                for s in 0..p.subjects {
                    for session in 1..=4u8 {
                        let (rec, events) = generate_raw_session(&p, s, session, raw_rate, interval_ms, mains)?;
                        write_recording_files(&out, &format!("{}_s{session}", subject_id(s)), &rec, &events)?;
                    }
                }
                eprintln!("wrote {} recordings to {}", 4 * p.subjects, out.display());
            } else {
                let data = generate_synthetic(&p)?;
                let epochs: Vec<Epoch> = data.into_iter().flat_map(|d| d.sessions.into_values().flatten()).collect();
                write_epochs_csv(create(&out)?, &epochs)?;
                eprintln!("wrote {} epochs to {}", epochs.len(), out.display());
            }
        }

        Command::Preprocess {
            input,
            out,
            config,
            mains,
            event_rate,
        } => {
            let mut cfg: PipelineConfig = match config {
                Some(path) => read_json(&path)?,
                None => PipelineConfig::default(),
            };
            if let Some(m) = mains {
                cfg.notch_hz = m;
            }
            let mut epochs = Vec::new();
            for file in read_recording_dir(&input)? {
                let mut events = file.events.clone();
                if let Some(r) = event_rate {
                    let scale = file.recording.rate_hz / r;
                    events.iter_mut().for_each(|e| e.onset_sample = (e.onset_sample as f64 * scale).floor() as usize);
                }
                let result = run_pipeline(&file.recording, &events, &cfg)
                    .with_context(|| format!("preprocessing {}", file.path.display()))?;
                let stages: Vec<String> = result
                    .transcript
                    .iter()
                    .map(|s| format!("{} {}x{} @{} Hz", s.stage, s.channels, s.samples, s.rate_hz))
                    .collect();
                eprintln!("{}: {}", file.path.display(), stages.join(" -> "));
                epochs.extend(result.epochs);
            }
            if epochs.is_empty() {
                bail!("no recordings found in {}", input.display());
            }
            write_epochs_csv(create(&out)?, &epochs)?;
            eprintln!("wrote {} epochs to {}", epochs.len(), out.display());
        }

        Command::Sample {
            epochs,
            rate,
            subject,
            k,
            variant,
            draws,
            r0,
            k_neighbors,
            seed,
            out,
        } => {
            let data = read_epochs(&epochs, rate, subject.as_deref())?;
            let points: Vec<LabeledPoint> = data
                .iter()
                .enumerate()
                .map(|(i, e)| LabeledPoint::new(i, e.data.clone(), e.label))
                .collect();
            let policy = match r0 {
                Some(r0) => RadiusPolicy::Fixed { r0 },
                None => RadiusPolicy::default(),
            };
            let cfg = ActiveSamplingConfig {
                radius: policy,
                k_neighbors,
                ..Default::default()
            };
            let mut samples = Vec::with_capacity(draws);
            for d in 0..draws {
                let params = cfg.params(k, rpp_bci::rng::derive_seed(seed, &[d as u64]));
                samples.push(policy.sample(variant.into(), &points, &params, cfg.radius_retries)?);
            }
            let id = subject.unwrap_or_else(|| "all".into());
            let mut w = create(&out)?;
            write_samples_csv(&mut w, &id, &samples)?;
            w.flush()?;
            eprintln!("wrote {draws} samples of {k} (r0 = {}) to {}", samples[0].params.r0, out.display());
        }

        Command::Train { config, out, model_dir } => {
            let (cfg, from_env) = load_config(&config)?;
            let data = load_datasets(&cfg)?;
            let report = run_experiment_with(&cfg, &data, model_dir.as_deref())?;
            let files = write_report_files(&out, &cfg, &report, from_env)?;
            eprintln!(
                "{} scheme, {} rows, mean accuracy {:.4}, training {:.1} s, sampling {:.1} s",
                cfg.scheme.as_str(),
                report.rows.len(),
                report.mean_accuracy(),
                report.total_train_seconds(),
                report.total_sampling_seconds()
            );
            for f in files {
                eprintln!("wrote {}", f.display());
            }
        }

        Command::Sweep { config, out, factors } => {
            let (cfg, _) = load_config(&config)?;
            let data = load_datasets(&cfg)?;
            let factors = factors.unwrap_or_else(|| DEFAULT_FACTORS.to_vec());
            let table = sampling_factor_sweep(&cfg, &data, &factors)?;
            write_sweep_csv(create(&out)?, &table)?;
            for s in &table.skipped {
                eprintln!("skipped {} at {}: {}", s.subject, s.factor, s.reason);
            }
            match table.modal_best() {
                Some(f) => eprintln!("modal best factor: {f}"),
                None => eprintln!("every cell was skipped"),
            }
        }

        Command::Report {
            reports,
            name,
            std,
            out,
            timings_noas,
            timings_as,
            classes,
        } => {
            let mut rows = Vec::new();
            let mut any_as = false;
            for path in &reports {
                let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let r = read_report_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
                any_as |= r.iter().any(|x| x.active_sampling);
                rows.extend(r);
            }
            let kind = match std {
                Std::Sample => StdKind::Sample,
                Std::Population => StdKind::Population,
            };
            let summary = aggregate(&[merge_rows(&rows)?], kind)?;
            fs::create_dir_all(&out)?;
            let table_path = out.join(summary_file_name(&name, any_as));
            write_summary_csv(create(&table_path)?, &summary)?;
            eprintln!("wrote {}", table_path.display());

            if let Some(n) = classes {
                let path = out.join("bitrate.csv");
                let mut w = create(&path)?;
                writeln!(w, "column,mean_accuracy,bits_per_decision")?;
                for (c, m) in summary.table.columns.iter().zip(&summary.mean) {
                    if let Some(m) = m {
                        writeln!(w, "{c},{m},{}", bitrate(m / 100.0, n)?)?;
                    }
                }
                w.flush()?;
                eprintln!("wrote {}", path.display());
            }

            if let (Some(a), Some(b)) = (timings_noas, timings_as) {
                let (ta, tb) = (subject_train_seconds(&a)?, subject_train_seconds(&b)?);
                let mut x = Vec::new();
                let mut y = Vec::new();
                for (s, t) in &ta {
                    if let Some((_, u)) = tb.iter().find(|(s2, _)| s2 == s) {
                        x.push(*t);
                        y.push(*u);
                    }
                }
                if x.is_empty() {
                    bail!("the timing files share no subjects");
                }
                let w = wilcoxon_signed_rank(&PairedSamples::new(x.clone(), y.clone())?);
                let path = out.join("wilcoxon.json");
                let mut f = create(&path)?;
                serde_json::to_writer_pretty(
                    &mut f,
                    &serde_json::json!({
                        "pairs": x.len(),
                        "mean_seconds_noas": x.iter().sum::<f64>() / x.len() as f64,
                        "mean_seconds_as": y.iter().sum::<f64>() / y.len() as f64,
                        "result": w,
                    }),
                )?;
                writeln!(f)?;
                f.flush()?;
                eprintln!("Wilcoxon p = {:e} over {} subjects; wrote {}", w.p_value, x.len(), path.display());
            }
        }

        Command::Embed {
            epochs,
            rate,
            subject,
            factor,
            seed,
            out,
        } => {
            let data = read_epochs(&epochs, rate, subject.as_deref())?;
            let refs: Vec<&Epoch> = data.iter().collect();
            let chosen = match factor {
                Some(f) => reduce_pool(&refs, f, PdsVariant::Dense, &ActiveSamplingConfig::default(), seed)?.apply(&refs),
                None => refs,
            };
            let emb = pca_embed(&chosen)?;
            write_embedding_csv(create(&out)?, &emb)?;
            eprintln!(
                "wrote {} points to {} (component variances {:.3}, {:.3})",
                chosen.len(),
                out.display(),
                emb.explained_variance[0],
                emb.explained_variance[1]
            );
        }
    }
    Ok(())
}

/// Total training seconds per subject from a timings CSV.
fn subject_train_seconds(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).with_context(|| format!("{} has no {name} column", path.display()));
    let (s, tr) = (col("subject")?, col("train_seconds")?);
    let mut out: Vec<(String, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let secs: f64 = rec[tr].parse().with_context(|| format!("bad train_seconds in {}", path.display()))?;
        match out.iter_mut().find(|(id, _)| id == &rec[s]) {
            Some((_, t)) => *t += secs,
            None => out.push((rec[s].to_string(), secs)),
        }
    }
    Ok(out)
}
