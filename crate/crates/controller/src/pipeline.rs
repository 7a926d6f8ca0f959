//! Time-ordered routing of reports into per-tag trackers.
//!
//! The [`Ingestor`] is shared by batch and live tracking. Reports enter a
//! reorder buffer and are released in a total order once they fall behind
//! the watermark (`max timestamp seen - reorder_watermark_ms`). Each tag
//! then windows its reports and advances its tracker one window at a time.
//! Given the same set of on-time reports the emitted records do not depend
//! on arrival order, and they come out sorted by `(t_ms, tag_id)`.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use tracing::{debug, warn};
use wanderloc_core::measurement::WINDOW_MS;
use wanderloc_core::{MeasurementFrame, RawReport, TagId, Tracker, TrackerConfig, WindowAccumulator};

use crate::config::DeploymentConfig;
use crate::log::TrajectoryLogRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    pub reorder_watermark_ms: i64,
    pub max_buffered_reports: usize,
    /// Consecutive empty windows after which a track is dropped.
    pub max_coast_windows: u32,
}

impl IngestOptions {
    pub fn from_config(cfg: &DeploymentConfig) -> Self {
        Self {
            reorder_watermark_ms: cfg.ingest.reorder_watermark_ms,
            max_buffered_reports: cfg.ingest.max_buffered_reports,
            max_coast_windows: cfg.tracker.max_coast_s,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub accepted: u64,
    /// Older than the watermark on arrival.
    pub late: u64,
    pub unknown_anchor: u64,
    /// Released early because the reorder buffer was full.
    pub forced_releases: u64,
    /// Refused by the windowing stage.
    pub rejected: u64,
    pub tracker_errors: u64,
    pub records: u64,
    pub track_resets: u64,
}

// Total order on reports so release order never depends on arrival order.
#[derive(Debug)]
struct Ordered(RawReport<f64>);

impl Ordered {
    fn cmp_key(&self, other: &Self) -> Ordering {
        let (a, b) = (&self.0, &other.0);
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.tag_id.cmp(&b.tag_id))
            .then_with(|| a.anchor_id.cmp(&b.anchor_id))
            .then_with(|| a.receiver_index.cmp(&b.receiver_index))
            .then_with(|| a.rssi.total_cmp(&b.rssi))
    }
}

impl PartialEq for Ordered {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key(other) == Ordering::Equal
    }
}
impl Eq for Ordered {}
impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key(other)
    }
}

/// Windowing and filtering for one tag.
#[derive(Debug)]
pub struct TagPipeline {
    tag_id: TagId,
    accumulator: WindowAccumulator<f64>,
    tracker: Tracker<f64>,
    /// Next window to step while a track is alive.
    next_window: Option<i64>,
    coasting: u32,
    max_coast_windows: u32,
}

impl TagPipeline {
    pub fn new(tag_id: TagId, config: TrackerConfig<f64>, max_coast_windows: u32) -> Self {
        Self {
            accumulator: WindowAccumulator::new(tag_id.clone()),
            tag_id,
            tracker: Tracker::new(config),
            next_window: None,
            coasting: 0,
            max_coast_windows,
        }
    }

    pub fn tag_id(&self) -> &TagId {
        &self.tag_id
    }

    /// Steps every window below `cut`, pairing windows with `frames`.
    fn advance(&mut self, frames: Vec<MeasurementFrame<f64>>, cut: i64, stats: &mut IngestStats, out: &mut Vec<TrajectoryLogRecord>) {
        let mut frames = frames.into_iter().peekable();
        loop {
            let window = match (self.next_window, frames.peek()) {
                (Some(w), _) => w,
                (None, Some(f)) => f.window_start,
                (None, None) => break,
            };
            if window >= cut {
                break;
            }
            let frame = frames.next_if(|f| f.window_start == window);
            if frame.is_none() && self.coasting >= self.max_coast_windows {
                debug!(tag = %self.tag_id, window, "track lost");
                stats.track_resets += 1;
                self.tracker.reset();
                self.next_window = None;
                self.coasting = 0;
                continue;
            }
            match self.tracker.process(frame.as_ref()) {
                Ok(Some(outcome)) => {
                    out.push(TrajectoryLogRecord::from_estimate(&self.tag_id, &outcome.estimate, outcome.kind));
                    stats.records += 1;
                }
                Ok(None) => {}
                Err(e) => {
                    warn!(tag = %self.tag_id, window, error = %e, "tracker step failed");
                    stats.tracker_errors += 1;
                }
            }
            self.coasting = if frame.is_some() { 0 } else { self.coasting + 1 };
            self.next_window = self.tracker.estimate().map(|_| window + WINDOW_MS);
        }
    }
}

/// Reorder buffer plus the set of live tag pipelines.
#[derive(Debug)]
pub struct Ingestor {
    config: TrackerConfig<f64>,
    options: IngestOptions,
    buffer: BinaryHeap<Reverse<Ordered>>,
    max_seen: Option<i64>,
    /// Reports below this are late. Never behind the watermark, and ahead
    /// of it after a forced release.
    floor: i64,
    tags: BTreeMap<TagId, TagPipeline>,
    stats: IngestStats,
}

impl Ingestor {
    pub fn new(config: TrackerConfig<f64>, options: IngestOptions) -> Self {
        Self {
            config,
            options,
            buffer: BinaryHeap::new(),
            max_seen: None,
            floor: i64::MIN,
            tags: BTreeMap::new(),
            stats: IngestStats::default(),
        }
    }

    pub fn from_deployment(cfg: &DeploymentConfig) -> Result<Self, crate::config::ConfigError> {
        Ok(Self::new(cfg.tracker_config()?, IngestOptions::from_config(cfg)))
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn watermark(&self) -> Option<i64> {
        self.max_seen.map(|m| m.saturating_sub(self.options.reorder_watermark_ms))
    }

    /// Accepts one report and returns any records it completes.
    pub fn push(&mut self, report: RawReport<f64>) -> Vec<TrajectoryLogRecord> {
        if self.config.anchor(&report.anchor_id).is_none() {
            self.stats.unknown_anchor += 1;
            debug!(anchor = %report.anchor_id, "report from unknown anchor");
            return Vec::new();
        }
        if report.timestamp < self.floor {
            self.stats.late += 1;
            debug!(ts = report.timestamp, floor = self.floor, "late report dropped");
            return Vec::new();
        }
        self.stats.accepted += 1;
        self.max_seen = Some(self.max_seen.map_or(report.timestamp, |m| m.max(report.timestamp)));
        self.buffer.push(Reverse(Ordered(report)));

        let watermark = self.watermark().unwrap_or(i64::MIN);
        self.floor = self.floor.max(watermark);
        while self.buffer.peek().is_some_and(|Reverse(r)| r.0.timestamp < watermark) {
            let Reverse(Ordered(r)) = self.buffer.pop().unwrap();
            self.release(r);
        }
        while self.buffer.len() > self.options.max_buffered_reports {
            let Reverse(Ordered(r)) = self.buffer.pop().unwrap();
            self.floor = self.floor.max(r.timestamp);
            self.stats.forced_releases += 1;
            self.release(r);
        }
        self.drain(watermark)
    }

    /// Flushes everything: releases the buffer and closes all windows.
    pub fn finish(&mut self) -> Vec<TrajectoryLogRecord> {
        while let Some(Reverse(Ordered(r))) = self.buffer.pop() {
            self.floor = self.floor.max(r.timestamp);
            self.release(r);
        }
        let mut out = Vec::new();
        for pipe in self.tags.values_mut() {
            match pipe.accumulator.drain_all() {
                Ok(frames) => {
                    let cut = pipe.accumulator.closed_until().unwrap_or(i64::MIN);
                    pipe.advance(frames, cut, &mut self.stats, &mut out);
                }
                Err(e) => {
                    warn!(tag = %pipe.tag_id, error = %e, "windowing failed");
                    self.stats.rejected += 1;
                }
            }
        }
        sort_records(&mut out);
        out
    }

    fn release(&mut self, report: RawReport<f64>) {
        let pipe = self.tags.entry(report.tag_id.clone()).or_insert_with(|| {
            TagPipeline::new(report.tag_id.clone(), self.config.clone(), self.options.max_coast_windows)
        });
        if let Err(e) = pipe.accumulator.push(report) {
            debug!(error = %e, "report refused by windowing");
            self.stats.rejected += 1;
        }
    }

    fn drain(&mut self, watermark: i64) -> Vec<TrajectoryLogRecord> {
        let mut out = Vec::new();
        for pipe in self.tags.values_mut() {
            match pipe.accumulator.drain_ready(watermark) {
                Ok(frames) => {
                    if let Some(cut) = pipe.accumulator.closed_until() {
                        pipe.advance(frames, cut, &mut self.stats, &mut out);
                    }
                }
                Err(e) => {
                    warn!(tag = %pipe.tag_id, error = %e, "windowing failed");
                    self.stats.rejected += 1;
                }
            }
        }
        sort_records(&mut out);
        out
    }
}

fn sort_records(records: &mut [TrajectoryLogRecord]) {
    records.sort_by(|a, b| a.t_ms.cmp(&b.t_ms).then_with(|| a.tag_id.cmp(&b.tag_id)));
}
