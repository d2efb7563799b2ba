//! File formats and command-line front ends for `cellguard-core`.
//!
//! - scenarios are JSON ([`load_scenario`]),
//! - the event log is JSON Lines, one [`LogEntry`] per line,
//! - traces are CSV with header `index,timestamp_ns,frame_kind`,
//! - jitter reports are JSON, with optional `threshold_us,fraction` and
//!   `second,count` CSVs for plotting.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub use cellguard_core as core;
use cellguard_core::jitter::JitterError;
use cellguard_core::sim::{LogEntry, SimError, SimOutput};
use cellguard_core::{Ccdf, JitterReport, Scenario, TraceRecord};
use thiserror::Error;

pub mod cli;
pub mod compare;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const TRACE_FILE: &str = "trace.csv";
pub const FINAL_STATE_FILE: &str = "final_state.json";

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed scenario: {source}")]
    ScenarioJson { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Scenario(#[from] SimError),
    #[error("{path}: malformed trace: {message}")]
    Trace { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Analysis { path: PathBuf, source: JitterError },
}

impl Error {
    /// Process exit code: 1 for I/O failures, 2 for bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, Error> {
    let mut text = String::new();
    File::open(path).and_then(|mut f| f.read_to_string(&mut text)).map_err(io_err(path))?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|source| Error::ScenarioJson { path: path.to_path_buf(), source })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn write_events<W: Write>(mut w: W, log: &[LogEntry]) -> io::Result<()> {
    for entry in log {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_trace<W: Write>(w: W, trace: &[TraceRecord]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in trace {
        out.serialize(r).map_err(io::Error::other)?;
    }
    out.flush()
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRecord>, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    if headers != vec!["index", "timestamp_ns", "frame_kind"] {
        return Err(format!("expected header index,timestamp_ns,frame_kind, found {}", headers.iter().collect::<Vec<_>>().join(",")));
    }
    rdr.deserialize().map(|rec| rec.map_err(|e| e.to_string())).collect()
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, Error> {
    let file = File::open(path).map_err(io_err(path))?;
    read_trace(io::BufReader::new(file)).map_err(|message| Error::Trace { path: path.to_path_buf(), message })
}

pub fn write_ccdf<W: Write>(w: W, c: &Ccdf) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["threshold_us", "fraction"])?;
    for (t, f) in &c.points {
        out.write_record([t.to_string(), f.to_string()])?;
    }
    out.flush()
}

pub fn write_per_second<W: Write>(w: W, buckets: &[(u64, u64)]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["second", "count"])?;
    for (s, c) in buckets {
        out.write_record([s.to_string(), c.to_string()])?;
    }
    out.flush()
}

pub fn report_json(report: &JitterReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Writes a file through `f`, attaching the path to any error.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), Error> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Writes `events.jsonl`, `trace.csv` and `final_state.json` into `dir`.
pub fn write_sim_output(dir: &Path, out: &SimOutput) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(EVENTS_FILE), |w| write_events(w, &out.log))?;
    write_file(&dir.join(TRACE_FILE), |w| write_trace(w, &out.trace))?;
    write_file(&dir.join(FINAL_STATE_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &out.final_state)?;
        w.write_all(b"\n")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cellguard_core::FrameKind;

    #[test]
    fn trace_csv_roundtrip() {
        let trace = vec![
            TraceRecord { index: 0, timestamp_ns: 0, frame_kind: FrameKind::Command },
            TraceRecord { index: 1, timestamp_ns: 400_000, frame_kind: FrameKind::Status },
            TraceRecord { index: 2, timestamp_ns: 1_000_000, frame_kind: FrameKind::Unknown },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index,timestamp_ns,frame_kind\n0,0,command\n"));
        assert_eq!(read_trace(&buf[..]).unwrap(), trace);
    }

    #[test]
    fn trace_csv_rejects_bad_input() {
        assert!(read_trace(&b"a,b,c\n1,2,command\n"[..]).is_err());
        assert!(read_trace(&b"index,timestamp_ns,frame_kind\n0,-5,command\n"[..]).is_err());
        assert!(read_trace(&b"index,timestamp_ns,frame_kind\n0,5,bogus\n"[..]).is_err());
    }

    #[test]
    fn plot_csvs_have_headers() {
        let mut buf = Vec::new();
        write_per_second(&mut buf, &[(0, 3), (1, 0)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "second,count\n0,3\n1,0\n");
        let mut buf = Vec::new();
        write_ccdf(&mut buf, &Ccdf { points: vec![(50.0, 0.02)] }).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "threshold_us,fraction\n50,0.02\n");
    }
}
