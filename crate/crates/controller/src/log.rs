//! Trajectory log: append-only CSV, one record per tag per tracked second.
//!
//! Each record is written with a single `write_all` so a crash leaves at
//! most one partial trailing line, which the reader skips.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wanderloc_core::{StateEstimate, StepKind, TagId};

pub const LOG_HEADER: &str = "tag_id,t_ms,x_m,y_m,vx_mps,vy_mps,p_trace,n_anchors_used,coast_flag";

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("unexpected header {0:?}")]
    Header(String),
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLogRecord {
    pub tag_id: String,
    /// Start of the averaging window the estimate belongs to.
    pub t_ms: i64,
    pub x_m: f64,
    pub y_m: f64,
    pub vx_mps: f64,
    pub vy_mps: f64,
    pub p_trace: f64,
    pub n_anchors_used: usize,
    /// 1 when the window had no measurements and the estimate is a pure prediction.
    pub coast_flag: u8,
}

impl TrajectoryLogRecord {
    pub fn from_estimate(tag: &TagId, est: &StateEstimate<f64>, kind: StepKind) -> Self {
        let (x, y) = est.position();
        let (vx, vy) = est.velocity();
        Self {
            tag_id: tag.to_string(),
            t_ms: est.timestamp,
            x_m: x,
            y_m: y,
            vx_mps: vx,
            vy_mps: vy,
            p_trace: est.covariance_trace(),
            n_anchors_used: kind.anchors_used(),
            coast_flag: u8::from(kind == StepKind::Coasted),
        }
    }

    /// CSV line including the newline. Floats use the shortest exact form.
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}\n",
            self.tag_id,
            self.t_ms,
            self.x_m,
            self.y_m,
            self.vx_mps,
            self.vy_mps,
            self.p_trace,
            self.n_anchors_used,
            self.coast_flag
        )
    }
}

/// Appends records to any byte sink.
#[derive(Debug)]
pub struct LogWriter<W: Write> {
    out: W,
    records: u64,
}

impl<W: Write> LogWriter<W> {
    /// Wraps a sink, writing the header first when asked.
    pub fn new(mut out: W, write_header: bool) -> io::Result<Self> {
        if write_header {
            out.write_all(format!("{LOG_HEADER}\n").as_bytes())?;
        }
        Ok(Self { out, records: 0 })
    }

    pub fn append(&mut self, record: &TrajectoryLogRecord) -> io::Result<()> {
        self.out.write_all(record.to_line().as_bytes())?;
        self.records += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl LogWriter<File> {
    /// Opens `path` for appending. A new or empty file gets the header; a
    /// torn trailing line from an earlier crash is cut off first.
    pub fn open_append(path: &Path) -> io::Result<Self> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let len = file.metadata()?.len();
        if len > 0 {
            let mut text = Vec::with_capacity(len as usize);
            file.seek(SeekFrom::Start(0))?;
            file.read_to_end(&mut text)?;
            let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if keep < text.len() {
                file.set_len(keep as u64)?;
            }
            let has_header = keep > 0;
            return Self::new(file, !has_header);
        }
        Self::new(file, true)
    }
}

/// Parses log text. A final line without a newline is treated as torn and ignored.
pub fn parse_log(text: &str) -> Result<Vec<TrajectoryLogRecord>, LogError> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if complete.is_empty() {
        return Ok(Vec::new());
    }
    let header = complete.lines().next().unwrap_or_default();
    if header != LOG_HEADER {
        return Err(LogError::Header(header.to_owned()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(complete.as_bytes());
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|source| LogError::Record { line: i + 2, source }))
        .collect()
}

pub fn read_log(path: &Path) -> Result<Vec<TrajectoryLogRecord>, LogError> {
    parse_log(&std::fs::read_to_string(path)?)
}

/// Serializes records exactly as the live writer does.
pub fn render_log(records: &[TrajectoryLogRecord]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in records {
        s.push_str(&r.to_line());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tag: &str, t: i64, coast: u8) -> TrajectoryLogRecord {
        TrajectoryLogRecord {
            tag_id: tag.into(),
            t_ms: t,
            x_m: 1.0 / 3.0,
            y_m: -2.5e-7,
            vx_mps: 0.1,
            vy_mps: 0.0,
            p_trace: 52.000000000000014,
            n_anchors_used: 3,
            coast_flag: coast,
        }
    }

    #[test]
    fn render_then_parse_is_exact() {
        let recs = vec![rec("T1", 0, 0), rec("T2", 1000, 1)];
        assert_eq!(parse_log(&render_log(&recs)).unwrap(), recs);
    }

    #[test]
    fn torn_tail_is_ignored() {
        let text = render_log(&[rec("T1", 0, 0), rec("T1", 1000, 0)]);
        let torn = &text[..text.len() - 5];
        assert_eq!(parse_log(torn).unwrap().len(), 1);
        assert!(parse_log("tag_id,t_m").unwrap().is_empty());
        assert!(parse_log("").unwrap().is_empty());
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(matches!(parse_log("a,b\n"), Err(LogError::Header(_))));
    }

    #[test]
    fn append_repairs_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        {
            let mut w = LogWriter::open_append(&path).unwrap();
            w.append(&rec("T1", 0, 0)).unwrap();
        }
        // simulate a crash mid-write
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"T1,1000,0.3").unwrap();
        drop(f);
        {
            let mut w = LogWriter::open_append(&path).unwrap();
            w.append(&rec("T1", 2000, 1)).unwrap();
        }
        let back = read_log(&path).unwrap();
        assert_eq!(back, vec![rec("T1", 0, 0), rec("T1", 2000, 1)]);
        assert_eq!(std::fs::read_to_string(&path).unwrap().matches("tag_id").count(), 1);
    }
}
