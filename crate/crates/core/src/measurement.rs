//! Two-stage RSS averaging.
//!
//! Raw per-receiver reports are first merged into per-packet observations
//! (mean over the anchor's two receivers), then averaged over fixed,
//! wall-clock aligned one second windows. The resulting per-anchor values for
//! one tag and one window form a [`MeasurementFrame`], the filter's
//! measurement vector.
//!
//! All averaging is done on dBm values directly.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ids::{AnchorId, TagId};
use crate::scalar::{lit, to_f64, Real};

/// Length of one averaging window.
pub const WINDOW_MS: i64 = 1000;
/// Two receiver reports closer than this belong to the same advertisement.
pub const PACKET_TOLERANCE_MS: i64 = 50;
/// Lowest accepted report value.
pub const RSSI_MIN_DBM: f64 = -120.0;
/// Highest accepted report value.
pub const RSSI_MAX_DBM: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error("no reports given")]
    EmptyInput,
    #[error("reports disagree on anchor or tag identity")]
    MixedIdentity,
    #[error("receiver index {0} is not 0 or 1")]
    InvalidReceiver(u8),
    #[error("rssi {0} dBm is not finite or outside [-120, 0]")]
    RssiOutOfRange(f64),
    #[error("reports do not form a single packet: {0}")]
    NotOnePacket(&'static str),
    #[error("window has no packets")]
    EmptyWindow,
    #[error("timestamp {timestamp} outside window starting at {window_start}")]
    OutsideWindow { timestamp: i64, window_start: i64 },
    #[error("window start {0} is not aligned to a whole second")]
    UnalignedWindow(i64),
    #[error("anchor {0} appears twice in one frame")]
    DuplicateAnchor(AnchorId),
    #[error("report for tag {got} pushed into accumulator of tag {expected}")]
    WrongTag { expected: TagId, got: TagId },
    #[error("report at {timestamp} belongs to an already closed window (closed through {closed_until})")]
    Late { timestamp: i64, closed_until: i64 },
}

/// One RSS reading of one advertisement by one anchor receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct RawReport<T: Real = f64> {
    pub anchor_id: AnchorId,
    pub receiver_index: u8,
    pub tag_id: TagId,
    pub rssi: T,
    pub timestamp: i64,
}

impl<T: Real> RawReport<T> {
    pub fn new(
        anchor_id: impl Into<AnchorId>,
        receiver_index: u8,
        tag_id: impl Into<TagId>,
        rssi: T,
        timestamp: i64,
    ) -> Result<Self, MeasurementError> {
        let report = Self {
            anchor_id: anchor_id.into(),
            receiver_index,
            tag_id: tag_id.into(),
            rssi,
            timestamp,
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        if self.receiver_index > 1 {
            return Err(MeasurementError::InvalidReceiver(self.receiver_index));
        }
        let v = to_f64(self.rssi);
        if !v.is_finite() || !(RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&v) {
            return Err(MeasurementError::RssiOutOfRange(v));
        }
        Ok(())
    }

    fn sort_key(&self) -> (i64, u8) {
        (self.timestamp, self.receiver_index)
    }
}

/// A single advertisement as seen by one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketObservation<T: Real = f64> {
    pub anchor_id: AnchorId,
    pub tag_id: TagId,
    pub rssi: T,
    pub timestamp: i64,
    pub receivers_used: u8,
}

/// Per-anchor mean over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorObservation<T: Real = f64> {
    pub anchor_id: AnchorId,
    pub mean_rssi: T,
    pub sample_count: usize,
    pub window_start: i64,
    pub window_end: i64,
}

/// Everything one tag produced in one window, ordered by anchor id.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame<T: Real = f64> {
    pub tag_id: TagId,
    pub window_start: i64,
    pub observations: Vec<AnchorObservation<T>>,
}

impl<T: Real> MeasurementFrame<T> {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Start of the window that contains `timestamp`.
pub fn window_start_of(timestamp: i64) -> i64 {
    timestamp.div_euclid(WINDOW_MS) * WINDOW_MS
}

fn mean<T: Real>(values: impl Iterator<Item = T>) -> Option<T> {
    let mut sum = T::zero();
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / lit::<T>(n as f64))
}

/// Merges the receiver reports of one advertisement at one anchor.
pub fn packet_mean<T: Real>(reports: &[RawReport<T>]) -> Result<PacketObservation<T>, MeasurementError> {
    let first = reports.first().ok_or(MeasurementError::EmptyInput)?;
    if reports
        .iter()
        .any(|r| r.anchor_id != first.anchor_id || r.tag_id != first.tag_id)
    {
        return Err(MeasurementError::MixedIdentity);
    }
    if reports.len() > 2 {
        return Err(MeasurementError::NotOnePacket("more than two receivers"));
    }
    for r in reports {
        r.validate()?;
    }
    if reports.len() == 2 && reports[0].receiver_index == reports[1].receiver_index {
        return Err(MeasurementError::NotOnePacket("same receiver twice"));
    }
    let earliest = reports.iter().map(|r| r.timestamp).min().unwrap_or(first.timestamp);
    let latest = reports.iter().map(|r| r.timestamp).max().unwrap_or(first.timestamp);
    if latest - earliest >= PACKET_TOLERANCE_MS {
        return Err(MeasurementError::NotOnePacket("receiver timestamps too far apart"));
    }
    let rssi = mean(reports.iter().map(|r| r.rssi)).ok_or(MeasurementError::EmptyInput)?;
    Ok(PacketObservation {
        anchor_id: first.anchor_id.clone(),
        tag_id: first.tag_id.clone(),
        rssi,
        timestamp: earliest,
        receivers_used: reports.len() as u8,
    })
}

/// Splits arbitrary reports into per-packet groups.
///
/// Reports are grouped per (tag, anchor) and scanned in timestamp order; a
/// report joins the open group when it comes from the other receiver and
/// lies within [`PACKET_TOLERANCE_MS`] of the group's first report.
/// Groups are returned ordered by (tag, anchor, first timestamp).
pub fn group_packets<T: Real>(reports: &[RawReport<T>]) -> Vec<Vec<RawReport<T>>> {
    let mut by_stream: BTreeMap<(&TagId, &AnchorId), Vec<&RawReport<T>>> = BTreeMap::new();
    for r in reports {
        by_stream.entry((&r.tag_id, &r.anchor_id)).or_default().push(r);
    }
    let mut groups = Vec::new();
    for (_, mut stream) in by_stream {
        stream.sort_by(|a, b| {
            a.sort_key()
                .cmp(&b.sort_key())
                .then(a.rssi.partial_cmp(&b.rssi).unwrap_or(std::cmp::Ordering::Equal))
        });
        let mut open: Vec<RawReport<T>> = Vec::with_capacity(2);
        for r in stream {
            let joins = match open.as_slice() {
                [head] => {
                    r.receiver_index != head.receiver_index
                        && r.timestamp - head.timestamp < PACKET_TOLERANCE_MS
                }
                _ => false,
            };
            if !joins && !open.is_empty() {
                groups.push(std::mem::take(&mut open));
            }
            open.push(r.clone());
        }
        if !open.is_empty() {
            groups.push(open);
        }
    }
    groups
}

/// Groups and merges reports into packet observations.
pub fn packetize<T: Real>(reports: &[RawReport<T>]) -> Result<Vec<PacketObservation<T>>, MeasurementError> {
    group_packets(reports).iter().map(|g| packet_mean(g)).collect()
}

/// Averages the packets one anchor received from one tag in one window.
pub fn window_average<T: Real>(
    packets: &[PacketObservation<T>],
    window_start: i64,
) -> Result<AnchorObservation<T>, MeasurementError> {
    let first = packets.first().ok_or(MeasurementError::EmptyWindow)?;
    let window_end = window_start + WINDOW_MS;
    for p in packets {
        if p.anchor_id != first.anchor_id || p.tag_id != first.tag_id {
            return Err(MeasurementError::MixedIdentity);
        }
        if p.timestamp < window_start || p.timestamp >= window_end {
            return Err(MeasurementError::OutsideWindow {
                timestamp: p.timestamp,
                window_start,
            });
        }
    }
    let mean_rssi = mean(packets.iter().map(|p| p.rssi)).ok_or(MeasurementError::EmptyWindow)?;
    Ok(AnchorObservation {
        anchor_id: first.anchor_id.clone(),
        mean_rssi,
        sample_count: packets.len(),
        window_start,
        window_end,
    })
}

/// Orders per-anchor observations of one window into a frame.
pub fn assemble_frame<T: Real>(
    mut observations: Vec<AnchorObservation<T>>,
    tag_id: TagId,
    window_start: i64,
) -> Result<MeasurementFrame<T>, MeasurementError> {
    if let Some(o) = observations.iter().find(|o| o.window_start != window_start) {
        return Err(MeasurementError::OutsideWindow {
            timestamp: o.window_start,
            window_start,
        });
    }
    observations.sort_by(|a, b| a.anchor_id.cmp(&b.anchor_id));
    if let Some(w) = observations.windows(2).find(|w| w[0].anchor_id == w[1].anchor_id) {
        return Err(MeasurementError::DuplicateAnchor(w[0].anchor_id.clone()));
    }
    Ok(MeasurementFrame {
        tag_id,
        window_start,
        observations,
    })
}

/// Builds the frames of every window touched by `packets`, which must all
/// belong to `tag_id`. Frames come back in window order.
pub fn frames_from_packets<T: Real>(
    tag_id: &TagId,
    packets: &[PacketObservation<T>],
) -> Result<Vec<MeasurementFrame<T>>, MeasurementError> {
    let mut cells: BTreeMap<i64, BTreeMap<&AnchorId, Vec<PacketObservation<T>>>> = BTreeMap::new();
    for p in packets {
        if &p.tag_id != tag_id {
            return Err(MeasurementError::MixedIdentity);
        }
        cells
            .entry(window_start_of(p.timestamp))
            .or_default()
            .entry(&p.anchor_id)
            .or_default()
            .push(p.clone());
    }
    cells
        .into_iter()
        .map(|(start, per_anchor)| {
            let obs = per_anchor
                .values()
                .map(|ps| window_average(ps, start))
                .collect::<Result<Vec<_>, _>>()?;
            assemble_frame(obs, tag_id.clone(), start)
        })
        .collect()
}

/// Streaming per-tag windowing.
///
/// Reports are pushed as they are released by the ingest reorder buffer.
/// [`drain_ready`](Self::drain_ready) closes every window that can no
/// longer change given a watermark: a window `[s, s+1000)` is final once
/// the watermark reaches `s + 1000 + PACKET_TOLERANCE_MS`, since a packet
/// starting just before the window end may still pick up its second
/// receiver report.
#[derive(Debug, Clone)]
pub struct WindowAccumulator<T: Real = f64> {
    tag_id: TagId,
    pending: Vec<RawReport<T>>,
    /// Windows starting before this are closed.
    closed_until: Option<i64>,
}

impl<T: Real> WindowAccumulator<T> {
    pub fn new(tag_id: TagId) -> Self {
        Self {
            tag_id,
            pending: Vec::new(),
            closed_until: None,
        }
    }

    pub fn tag_id(&self) -> &TagId {
        &self.tag_id
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Start of the first window that is still open, if any window closed yet.
    pub fn closed_until(&self) -> Option<i64> {
        self.closed_until
    }

    /// Latest report timestamp still pending.
    pub fn last_pending_timestamp(&self) -> Option<i64> {
        self.pending.iter().map(|r| r.timestamp).max()
    }

    pub fn push(&mut self, report: RawReport<T>) -> Result<(), MeasurementError> {
        if report.tag_id != self.tag_id {
            return Err(MeasurementError::WrongTag {
                expected: self.tag_id.clone(),
                got: report.tag_id,
            });
        }
        report.validate()?;
        if let Some(closed) = self.closed_until {
            if report.timestamp < closed {
                return Err(MeasurementError::Late {
                    timestamp: report.timestamp,
                    closed_until: closed,
                });
            }
        }
        self.pending.push(report);
        Ok(())
    }

    /// Closes all windows ending at or before `watermark - PACKET_TOLERANCE_MS`.
    pub fn drain_ready(&mut self, watermark: i64) -> Result<Vec<MeasurementFrame<T>>, MeasurementError> {
        let cut = window_start_of(watermark - PACKET_TOLERANCE_MS);
        self.close_before(cut)
    }

    /// Closes every window that holds pending data.
    pub fn drain_all(&mut self) -> Result<Vec<MeasurementFrame<T>>, MeasurementError> {
        match self.last_pending_timestamp() {
            Some(last) => self.close_before(window_start_of(last) + WINDOW_MS + PACKET_TOLERANCE_MS),
            None => Ok(Vec::new()),
        }
    }

    fn close_before(&mut self, cut: i64) -> Result<Vec<MeasurementFrame<T>>, MeasurementError> {
        if self.closed_until.is_some_and(|c| c >= cut) {
            return Ok(Vec::new());
        }
        // Packets that start before `cut` are complete once every report
        // below `cut + tolerance` is known.
        let horizon = cut + PACKET_TOLERANCE_MS;
        let (ready, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.pending).into_iter().partition(|r| r.timestamp < horizon);
        self.pending = rest;
        let mut packets = Vec::new();
        for group in group_packets(&ready) {
            if group[0].timestamp < cut {
                packets.push(packet_mean(&group)?);
            } else {
                self.pending.extend(group);
            }
        }
        self.closed_until = Some(window_start_of(cut));
        frames_from_packets(&self.tag_id, &packets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(anchor: &str, rx: u8, rssi: f64, ts: i64) -> RawReport<f64> {
        RawReport::new(anchor, rx, "T1", rssi, ts).unwrap()
    }

    fn pkt(anchor: &str, rssi: f64, ts: i64) -> PacketObservation<f64> {
        PacketObservation {
            anchor_id: anchor.into(),
            tag_id: "T1".into(),
            rssi,
            timestamp: ts,
            receivers_used: 1,
        }
    }

    #[test]
    fn packet_mean_of_two_receivers() {
        let p = packet_mean(&[rep("A1", 0, -60.0, 100), rep("A1", 1, -70.0, 102)]).unwrap();
        assert_eq!(p.rssi, -65.0);
        assert_eq!(p.receivers_used, 2);
        assert_eq!(p.timestamp, 100);
    }

    #[test]
    fn packet_mean_single_receiver() {
        let p = packet_mean(&[rep("A1", 0, -60.0, 100)]).unwrap();
        assert_eq!(p.rssi, -60.0);
        assert_eq!(p.receivers_used, 1);
    }

    #[test]
    fn packet_mean_errors() {
        assert_eq!(packet_mean::<f64>(&[]), Err(MeasurementError::EmptyInput));
        assert_eq!(
            packet_mean(&[rep("A1", 0, -60.0, 100), rep("A2", 1, -60.0, 100)]),
            Err(MeasurementError::MixedIdentity)
        );
        assert!(matches!(
            packet_mean(&[rep("A1", 0, -60.0, 100), rep("A1", 1, -60.0, 150)]),
            Err(MeasurementError::NotOnePacket(_))
        ));
        assert!(matches!(
            packet_mean(&[rep("A1", 0, -60.0, 100), rep("A1", 0, -60.0, 101)]),
            Err(MeasurementError::NotOnePacket(_))
        ));
    }

    #[test]
    fn report_validation() {
        assert_eq!(
            RawReport::<f64>::new("A", 2, "T", -50.0, 0),
            Err(MeasurementError::InvalidReceiver(2))
        );
        assert!(RawReport::<f64>::new("A", 0, "T", -120.5, 0).is_err());
        assert!(RawReport::<f64>::new("A", 0, "T", 0.5, 0).is_err());
        assert!(RawReport::<f64>::new("A", 0, "T", f64::NAN, 0).is_err());
        assert!(RawReport::<f64>::new("A", 1, "T", -120.0, 0).is_ok());
    }

    #[test]
    fn window_average_constant() {
        let ps: Vec<_> = (0..10).map(|k| pkt("A1", -70.0, k * 100)).collect();
        let o = window_average(&ps, 0).unwrap();
        assert_eq!(o.mean_rssi, -70.0);
        assert_eq!(o.sample_count, 10);
        assert_eq!(o.window_end - o.window_start, 1000);
    }

    #[test]
    fn window_average_ramp() {
        let ps: Vec<_> = (0..10).map(|k| pkt("A1", -60.0 - k as f64, 1000 + k * 100)).collect();
        // (-60 - 61 - ... - 69) / 10
        let oracle: f64 = (0..10).map(|k| -60.0 - k as f64).sum::<f64>() / 10.0;
        assert_eq!(oracle, -64.5);
        let o = window_average(&ps, 1000).unwrap();
        assert!((o.mean_rssi - oracle).abs() < 1e-12);
    }

    #[test]
    fn window_average_errors() {
        assert_eq!(window_average::<f64>(&[], 0), Err(MeasurementError::EmptyWindow));
        assert!(matches!(
            window_average(&[pkt("A1", -60.0, 1000)], 0),
            Err(MeasurementError::OutsideWindow { .. })
        ));
    }

    fn obs(anchor: &str, start: i64) -> AnchorObservation<f64> {
        AnchorObservation {
            anchor_id: anchor.into(),
            mean_rssi: -70.0,
            sample_count: 1,
            window_start: start,
            window_end: start + WINDOW_MS,
        }
    }

    #[test]
    fn assemble_sorts_by_anchor() {
        let ids = ["A7", "A3", "A1", "A5", "A2", "A6", "A4"];
        let f = assemble_frame(ids.iter().map(|a| obs(a, 0)).collect(), "T1".into(), 0).unwrap();
        let got: Vec<_> = f.observations.iter().map(|o| o.anchor_id.as_str()).collect();
        assert_eq!(got, ["A1", "A2", "A3", "A4", "A5", "A6", "A7"]);

        let one = assemble_frame(vec![obs("A1", 0)], "T1".into(), 0).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn assemble_rejects_duplicates() {
        let err = assemble_frame(vec![obs("A1", 0), obs("A1", 0)], "T1".into(), 0).unwrap_err();
        assert_eq!(err, MeasurementError::DuplicateAnchor("A1".into()));
    }

    #[test]
    fn window_alignment_handles_negative_times() {
        assert_eq!(window_start_of(0), 0);
        assert_eq!(window_start_of(999), 0);
        assert_eq!(window_start_of(1000), 1000);
        assert_eq!(window_start_of(-1), -1000);
    }

    #[test]
    fn grouping_pairs_receivers() {
        let reports = vec![
            rep("A1", 0, -60.0, 0),
            rep("A1", 1, -62.0, 3),
            rep("A1", 1, -64.0, 100),
            rep("A1", 0, -66.0, 140),
            rep("A2", 0, -70.0, 0),
        ];
        let groups = group_packets(&reports);
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[0].len(), 2);
        assert_eq!(groups[1].len(), 2);
        assert_eq!(groups[2][0].anchor_id.as_str(), "A2");
    }

    #[test]
    fn accumulator_waits_for_straddling_packet() {
        let mut acc = WindowAccumulator::new("T1".into());
        acc.push(rep("A1", 0, -60.0, 990)).unwrap();
        // window [0,1000) is not final before 1050
        assert!(acc.drain_ready(1049).unwrap().is_empty());
        acc.push(rep("A1", 1, -70.0, 1010)).unwrap();
        let frames = acc.drain_ready(1050).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].observations[0].mean_rssi, -65.0);
        assert_eq!(frames[0].observations[0].sample_count, 1);
        assert!(matches!(
            acc.push(rep("A1", 0, -60.0, 999)),
            Err(MeasurementError::Late { .. })
        ));
    }

    #[test]
    fn accumulator_matches_batch() {
        let mut reports = Vec::new();
        for k in 0..50i64 {
            for (a, base) in [("A1", -60.0), ("A2", -75.0)] {
                reports.push(rep(a, 0, base - (k % 7) as f64, k * 100 + 3));
                if k % 3 != 0 {
                    reports.push(rep(a, 1, base - (k % 5) as f64, k * 100 + 5));
                }
            }
        }
        let batch = frames_from_packets(&"T1".into(), &packetize(&reports).unwrap()).unwrap();

        let mut acc = WindowAccumulator::new("T1".into());
        let mut streamed = Vec::new();
        for r in &reports {
            acc.push(r.clone()).unwrap();
            streamed.extend(acc.drain_ready(r.timestamp).unwrap());
        }
        streamed.extend(acc.drain_all().unwrap());
        assert_eq!(batch, streamed);
        assert_eq!(streamed.len(), 5);
    }
}
