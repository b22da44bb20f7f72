//! Text formats for raw recordings, stimulus events and epochs.
//!
//! A raw recording is a CSV file whose first record holds
//! `subject,session,rate_hz,channels` values (an optional literal header
//! line with those names may precede it), followed by one row per time
//! sample. Events live next to it in `<stem>_events.csv` with the header
//! `onset_sample,is_target`.
//!
//! Epoch files carry a header `subject,session,label,ch0_t0,...` and one
//! epoch per row, values flattened channel-major.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{Epoch, RawRecording, StimulusEvent};
use crate::error::{Error, Result, ResultExt};

const EVENTS_SUFFIX: &str = "_events";

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::format(what, format!("missing column {i}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::format(what, format!("cannot parse {raw:?} in column {i}")))
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim() {
        "1" | "true" | "True" | "TRUE" => Some(true),
        "0" | "false" | "False" | "FALSE" => Some(false),
        _ => None,
    }
}

pub fn read_recording<R: Read>(reader: R) -> Result<RawRecording> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let mut meta = records
        .next()
        .ok_or_else(|| Error::format("recording", "empty file"))??;
    if meta.get(0).map(str::trim) == Some("subject") {
        meta = records
            .next()
            .ok_or_else(|| Error::format("recording", "missing metadata line"))??;
    }
    let subject: String = field(&meta, 0, "recording metadata")?;
    let session: u8 = field(&meta, 1, "recording metadata")?;
    let rate_hz: f64 = field(&meta, 2, "recording metadata")?;
    let channels: usize = field(&meta, 3, "recording metadata")?;
    if channels == 0 {
        return Err(Error::format("recording metadata", "channel count is zero"));
    }
    let mut data = vec![Vec::new(); channels];
    for (row, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != channels {
            return Err(Error::format(
                "recording",
                format!("sample row {row} has {} values, expected {channels}", rec.len()),
            ));
        }
        for (c, col) in data.iter_mut().enumerate() {
            col.push(field(&rec, c, "recording sample")?);
        }
    }
    RawRecording::new(data, rate_hz, subject, session)
}

pub fn write_recording<W: Write>(writer: W, rec: &RawRecording) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    w.write_record(["subject", "session", "rate_hz", "channels"])?;
    w.write_record([
        rec.subject.clone(),
        rec.session.to_string(),
        rec.rate_hz.to_string(),
        rec.channels().to_string(),
    ])?;
    let mut row = Vec::with_capacity(rec.channels());
    for t in 0..rec.samples() {
        row.clear();
        row.extend(rec.data.iter().map(|c| c[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(reader: R) -> Result<Vec<StimulusEvent>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["onset_sample", "is_target"] {
        return Err(Error::format("events", format!("unexpected header {headers:?}")));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let onset_sample = field(&rec, 0, "events")?;
            let raw = rec.get(1).unwrap_or("");
            let is_target = parse_bool(raw)
                .ok_or_else(|| Error::format("events", format!("bad is_target value {raw:?}")))?;
            Ok(StimulusEvent { onset_sample, is_target })
        })
        .collect()
}

pub fn write_events<W: Write>(writer: W, events: &[StimulusEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["onset_sample", "is_target"])?;
    for e in events {
        w.write_record([e.onset_sample.to_string(), u8::from(e.is_target).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A recording file and its events sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingFile {
    pub path: PathBuf,
    pub recording: RawRecording,
    pub events: Vec<StimulusEvent>,
}

/// Reads every `<stem>.csv` + `<stem>_events.csv` pair in `dir`, sorted by
/// file name.
pub fn read_recording_dir(dir: &Path) -> Result<Vec<RecordingFile>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && !p.file_stem().is_some_and(|s| s.to_string_lossy().ends_with(EVENTS_SUFFIX))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            let events_path = path.with_file_name(format!("{stem}{EVENTS_SUFFIX}.csv"));
            let recording = read_recording(fs::File::open(&path)?)
                .with_context(|| format!("reading {}", path.display()))?;
            let events = read_events(
                fs::File::open(&events_path)
                    .map_err(Error::from)
                    .with_context(|| format!("opening {}", events_path.display()))?,
            )
            .with_context(|| format!("reading {}", events_path.display()))?;
            Ok(RecordingFile { path, recording, events })
        })
        .collect()
}

/// Writes `<dir>/<stem>.csv` and its events sidecar.
pub fn write_recording_files(
    dir: &Path,
    stem: &str,
    rec: &RawRecording,
    events: &[StimulusEvent],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_recording(
        std::io::BufWriter::new(fs::File::create(dir.join(format!("{stem}.csv")))?),
        rec,
    )?;
    write_events(
        std::io::BufWriter::new(fs::File::create(dir.join(format!("{stem}{EVENTS_SUFFIX}.csv")))?),
        events,
    )
}

pub fn write_epochs_csv<W: Write>(writer: W, epochs: &[Epoch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = epochs.first() else {
        w.write_record(["subject", "session", "label"])?;
        w.flush()?;
        return Ok(());
    };
    let (channels, samples) = (first.channels, first.samples());
    let mut header = vec!["subject".to_string(), "session".into(), "label".into()];
    for c in 0..channels {
        for t in 0..samples {
            header.push(format!("ch{c}_t{t}"));
        }
    }
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for e in epochs {
        if e.channels != channels || e.samples() != samples {
            return Err(Error::invalid("epochs differ in shape"));
        }
        row.clear();
        row.push(e.subject.clone());
        row.push(e.session.to_string());
        row.push(e.label.to_string());
        row.extend(e.data.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an epoch file. The format carries no rate, so it is supplied by
/// the caller; epoch indices are assigned in row order per
/// `(subject, session)`.
pub fn read_epochs_csv<R: Read>(reader: R, rate_hz: f64) -> Result<Vec<Epoch>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[..3] != ["subject", "session", "label"] {
        return Err(Error::format("epochs", "header must start with subject,session,label"));
    }
    let (channels, samples) = match cols.last() {
        Some(last) if cols.len() > 3 => parse_value_column(last)
            .map(|(c, t)| (c + 1, t + 1))
            .ok_or_else(|| Error::format("epochs", format!("bad value column {last:?}")))?,
        _ => (0, 0),
    };
    if 3 + channels * samples != cols.len() {
        return Err(Error::format(
            "epochs",
            format!("{} value columns do not form a {channels} x {samples} grid", cols.len() - 3),
        ));
    }
    let mut counters: std::collections::HashMap<(String, u8), usize> = Default::default();
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec?;
            let subject: String = field(&rec, 0, "epochs")?;
            let session: u8 = field(&rec, 1, "epochs")?;
            let label: usize = field(&rec, 2, "epochs")?;
            let data = (3..rec.len())
                .map(|i| field(&rec, i, "epochs"))
                .collect::<Result<Vec<f64>>>()
                .with_context(|| format!("epoch row {row}"))?;
            let slot = counters.entry((subject.clone(), session)).or_default();
            let index = *slot;
            *slot += 1;
            Ok(Epoch {
                subject,
                session,
                index,
                label,
                rate_hz,
                channels,
                data,
            })
        })
        .collect()
}

fn parse_value_column(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("ch")?;
    let (c, t) = rest.split_once("_t")?;
    Some((c.parse().ok()?, t.parse().ok()?))
}
