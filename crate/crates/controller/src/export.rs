//! Static exports of a finished trajectory log and episode reports.

use std::collections::BTreeMap;
use std::io::{self, Write};

use chrono::{DateTime, SecondsFormat};
use serde_json::{json, Value};
use wanderloc_core::WanderEpisode;

use crate::log::{render_log, TrajectoryLogRecord};

pub const EPISODE_HEADER: &str = "tag_id,start,end,distance_m,extent_m,mean_speed_mps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    Csv,
    Geojson,
}

/// Header plus one row per record, same layout as the log itself.
pub fn to_csv(records: &[TrajectoryLogRecord]) -> String {
    render_log(records)
}

/// One LineString feature per tag, points in time order, with the matching
/// timestamps and coast flags as per-point property arrays.
pub fn to_geojson(records: &[TrajectoryLogRecord]) -> Value {
    let mut by_tag: BTreeMap<&str, Vec<&TrajectoryLogRecord>> = BTreeMap::new();
    for r in records {
        by_tag.entry(r.tag_id.as_str()).or_default().push(r);
    }
    let features: Vec<Value> = by_tag
        .into_iter()
        .map(|(tag, mut recs)| {
            recs.sort_by_key(|r| r.t_ms);
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": recs.iter().map(|r| [r.x_m, r.y_m]).collect::<Vec<_>>(),
                },
                "properties": {
                    "tag_id": tag,
                    "t_ms": recs.iter().map(|r| r.t_ms).collect::<Vec<_>>(),
                    "time": recs.iter().map(|r| iso_millis(r.t_ms)).collect::<Vec<_>>(),
                    "coast_flag": recs.iter().map(|r| r.coast_flag).collect::<Vec<_>>(),
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_export(records: &[TrajectoryLogRecord], format: ExportFormat, out: &mut impl Write) -> io::Result<()> {
    match format {
        ExportFormat::Csv => out.write_all(to_csv(records).as_bytes()),
        ExportFormat::Geojson => {
            serde_json::to_writer_pretty(&mut *out, &to_geojson(records))?;
            out.write_all(b"\n")
        }
    }
}

/// Unix milliseconds as RFC 3339 UTC with millisecond precision.
pub fn iso_millis(t_ms: i64) -> String {
    match DateTime::from_timestamp_millis(t_ms) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Millis, true),
        None => t_ms.to_string(),
    }
}

/// Episode times are in seconds since the Unix epoch.
pub fn episodes_csv(episodes: &[WanderEpisode<f64>]) -> String {
    let mut s = format!("{EPISODE_HEADER}\n");
    for e in episodes {
        let ms = |t: f64| (t * 1000.0).round() as i64;
        s.push_str(&format!(
            "{},{},{},{:.2},{:.2},{:.3}\n",
            e.tag_id,
            iso_millis(ms(e.start_t)),
            iso_millis(ms(e.end_t)),
            e.distance_m,
            e.extent_m,
            e.mean_speed_mps
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::parse_log;

    fn rec(tag: &str, t: i64) -> TrajectoryLogRecord {
        TrajectoryLogRecord {
            tag_id: tag.into(),
            t_ms: t,
            x_m: 3.25,
            y_m: 1.0,
            vx_mps: 0.5,
            vy_mps: -0.1,
            p_trace: 4.0,
            n_anchors_used: 2,
            coast_flag: 0,
        }
    }

    #[test]
    fn one_record_is_two_lines() {
        let csv = to_csv(&[rec("T1", 0)]);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![rec("T1", 0), rec("T2", 0), rec("T1", 1000)];
        assert_eq!(parse_log(&to_csv(&recs)).unwrap(), recs);
    }

    #[test]
    fn geojson_has_feature_per_tag() {
        let g = to_geojson(&[rec("T2", 1000), rec("T1", 0), rec("T2", 0)]);
        let features = g["features"].as_array().unwrap();
        assert_eq!(features.len(), 2);
        assert_eq!(features[0]["properties"]["tag_id"], "T1");
        assert_eq!(features[1]["geometry"]["coordinates"].as_array().unwrap().len(), 2);
        assert_eq!(features[1]["properties"]["t_ms"], json!([0, 1000]));
        assert_eq!(features[1]["properties"]["time"][1], "1970-01-01T00:00:01.000Z");
    }

    #[test]
    fn iso_format() {
        assert_eq!(iso_millis(1_700_000_000_000), "2023-11-14T22:13:20.000Z");
    }

    #[test]
    fn episode_rows() {
        let e = WanderEpisode {
            tag_id: "T1".into(),
            start_t: 1_700_000_000.0,
            end_t: 1_700_000_600.0,
            distance_m: 401.234,
            extent_m: 7.1,
            mean_speed_mps: 0.6687,
        };
        let csv = episodes_csv(&[e]);
        assert_eq!(
            csv,
            "tag_id,start,end,distance_m,extent_m,mean_speed_mps\n\
             T1,2023-11-14T22:13:20.000Z,2023-11-14T22:23:20.000Z,401.23,7.10,0.669\n"
        );
    }
}
