//! Trajectory log to wandering episodes.

use std::collections::BTreeMap;

use tracing::warn;
use wanderloc_core::{detect_episodes, AnalyticsError, DetectorParams, TrackPoint, Trajectory, WanderEpisode};

use crate::log::TrajectoryLogRecord;

/// Per-tag trajectories in seconds since the Unix epoch.
pub fn trajectories(records: &[TrajectoryLogRecord]) -> Result<Vec<Trajectory<f64>>, AnalyticsError> {
    let mut by_tag: BTreeMap<&str, Vec<TrackPoint<f64>>> = BTreeMap::new();
    for r in records {
        by_tag
            .entry(r.tag_id.as_str())
            .or_default()
            .push(TrackPoint::new(r.t_ms as f64 / 1000.0, r.x_m, r.y_m));
    }
    by_tag
        .into_iter()
        .map(|(tag, mut pts)| {
            pts.sort_by(|a, b| a.t.total_cmp(&b.t));
            Trajectory::new(tag, pts)
        })
        .collect()
}

/// Episodes for every tag. Tags whose track is shorter than one detector
/// window are skipped with a warning.
pub fn analyze(
    records: &[TrajectoryLogRecord],
    params: &DetectorParams<f64>,
) -> Result<Vec<WanderEpisode<f64>>, AnalyticsError> {
    let mut episodes = Vec::new();
    for traj in trajectories(records)? {
        match detect_episodes(&traj, params) {
            Ok(eps) => episodes.extend(eps),
            Err(AnalyticsError::TooShort { span_s, window_s }) => {
                warn!(tag = %traj.tag_id(), span_s, window_s, "track too short to analyze");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tag: &str, t_ms: i64, x: f64) -> TrajectoryLogRecord {
        TrajectoryLogRecord {
            tag_id: tag.into(),
            t_ms,
            x_m: x,
            y_m: 0.0,
            vx_mps: 0.0,
            vy_mps: 0.0,
            p_trace: 1.0,
            n_anchors_used: 3,
            coast_flag: 0,
        }
    }

    #[test]
    fn pacing_log_yields_one_episode_and_short_tags_are_skipped() {
        // 0.5 m/s back and forth over 5 m for 300 s
        let mut recs: Vec<_> = (0..=300)
            .map(|s| {
                let phase = (s as f64 * 0.5) % 10.0;
                rec("T1", s * 1000, if phase <= 5.0 { phase } else { 10.0 - phase })
            })
            .collect();
        recs.push(rec("T2", 0, 0.0));
        let eps = analyze(&recs, &DetectorParams::default()).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].tag_id.as_str(), "T1");
        assert!((eps[0].distance_m - 150.0).abs() < 1e-9);
    }
}
