//! Batch mode: simulate to files, track a report file.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;
use tracing::warn;
use wanderloc_core::{emit, Emission, GroundTruthSample, RawReport, Scenario, SimError};

use crate::config::{ConfigError, DeploymentConfig};
use crate::log::TrajectoryLogRecord;
use crate::pipeline::{IngestStats, Ingestor};
use crate::wire::{format_report, parse_report, WireError};

pub const TRUTH_HEADER: &str = "tag_id,t_s,x_m,y_m";

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// Parsed report file plus the lines that failed.
#[derive(Debug, Default)]
pub struct ReportFile {
    pub reports: Vec<RawReport<f64>>,
    pub errors: Vec<(usize, WireError)>,
}

pub fn parse_report_lines(reader: impl BufRead) -> io::Result<ReportFile> {
    let mut out = ReportFile::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_report(&line) {
            Ok(r) => out.reports.push(r),
            Err(e) => out.errors.push((i + 1, e)),
        }
    }
    Ok(out)
}

pub fn read_report_file(path: &Path) -> io::Result<ReportFile> {
    parse_report_lines(BufReader::new(File::open(path)?))
}

pub fn write_reports(reports: &[RawReport<f64>], out: impl Write) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    for r in reports {
        out.write_all(format_report(r).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_truth(truth: &[GroundTruthSample], out: impl Write) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{TRUTH_HEADER}")?;
    for s in truth {
        writeln!(out, "{},{},{},{}", s.tag_id, s.t, s.x, s.y)?;
    }
    out.flush()
}

/// Runs a scenario and rounds reports to wire precision, so the returned
/// reports are exactly what a report file would contain.
pub fn simulate(scenario: &Scenario) -> Result<Emission, SimError> {
    let mut em = emit(scenario)?;
    for r in &mut em.reports {
        r.rssi = (r.rssi * 10.0).round() / 10.0 + 0.0;
    }
    Ok(em)
}

#[derive(Debug, Clone, Default)]
pub struct TrackSummary {
    pub records: Vec<TrajectoryLogRecord>,
    pub stats: IngestStats,
}

/// Tracks a set of reports exactly as the live service would.
pub fn track_reports(cfg: &DeploymentConfig, mut reports: Vec<RawReport<f64>>) -> Result<TrackSummary, ConfigError> {
    let mut ing = Ingestor::from_deployment(cfg)?;
    // sorting keeps every report on time; the ingestor fixes ties itself
    reports.sort_by_key(|r| r.timestamp);
    let mut records = Vec::new();
    for r in reports {
        records.extend(ing.push(r));
    }
    records.extend(ing.finish());
    if records.is_empty() {
        warn!("no trajectory records produced");
    }
    Ok(TrackSummary {
        records,
        stats: ing.stats().clone(),
    })
}

/// Reads a report file, tracks it and returns the records and parse errors.
pub fn run_offline(cfg: &DeploymentConfig, input: &Path) -> Result<(TrackSummary, Vec<(usize, WireError)>), OfflineError> {
    let file = read_report_file(input)?;
    for (line, e) in file.errors.iter().take(10) {
        warn!(line, error = %e, "skipping bad report line");
    }
    Ok((track_reports(cfg, file.reports)?, file.errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioFile;

    #[test]
    fn report_file_round_trip() {
        let scenario = ScenarioFile::load("corridor-walk").unwrap().to_scenario().unwrap();
        let mut short = scenario.clone();
        short.duration_s = 5.0;
        let em = simulate(&short).unwrap();
        let mut buf = Vec::new();
        write_reports(&em.reports, &mut buf).unwrap();
        let back = parse_report_lines(buf.as_slice()).unwrap();
        assert!(back.errors.is_empty());
        assert_eq!(back.reports, em.reports);
    }

    #[test]
    fn bad_lines_are_collected() {
        let text = "{\"v\":1,\"a\":\"A1\",\"r\":0,\"g\":\"T1\",\"s\":-60.0,\"t\":0}\n\ngarbage\n";
        let f = parse_report_lines(text.as_bytes()).unwrap();
        assert_eq!(f.reports.len(), 1);
        assert_eq!(f.errors.len(), 1);
        assert_eq!(f.errors[0].0, 3);
    }

    #[test]
    fn empty_input_gives_empty_log() {
        let cfg = DeploymentConfig::load("fig2-corridors").unwrap();
        let s = track_reports(&cfg, Vec::new()).unwrap();
        assert!(s.records.is_empty());
    }
}
