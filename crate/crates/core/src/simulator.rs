//! Synthetic deployment: scripted tag motion and the per-receiver RSS
//! reports anchors would produce for it.
//!
//! Every random draw comes from a ChaCha generator seeded by hashing
//! `(seed, tag, anchor, receiver, packet index)`, so a single report can be
//! reproduced without replaying the rest of the stream and results do not
//! depend on iteration order.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::ekf::{pathloss_rss, AnchorConfig, DEFAULT_D_MIN_M};
use crate::ids::{AnchorId, TagId};
use crate::measurement::{RawReport, RSSI_MAX_DBM, RSSI_MIN_DBM};

pub const DEFAULT_ADVERTISE_HZ: f64 = 10.0;
pub const DEFAULT_START_MS: i64 = 1_700_000_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidScenario(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Self { t, x, y }
    }
}

/// Piecewise-linear tag path.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryScript {
    pub tag_id: TagId,
    pub waypoints: Vec<Waypoint>,
}

impl TrajectoryScript {
    pub fn new(tag_id: impl Into<TagId>, waypoints: Vec<Waypoint>) -> Result<Self, SimError> {
        let s = Self {
            tag_id: tag_id.into(),
            waypoints,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.waypoints.is_empty() {
            return Err(invalid(format!("tag {} has no waypoints", self.tag_id)));
        }
        if self
            .waypoints
            .iter()
            .any(|w| !(w.t.is_finite() && w.x.is_finite() && w.y.is_finite()))
        {
            return Err(invalid(format!("tag {} has a non-finite waypoint", self.tag_id)));
        }
        if self.waypoints.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(invalid(format!("tag {} waypoint times must increase", self.tag_id)));
        }
        Ok(())
    }

    /// Sum of waypoint-to-waypoint distances.
    pub fn scripted_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }
}

/// Position on the script at `t` seconds, held at the ends.
pub fn position_at(script: &TrajectoryScript, t: f64) -> (f64, f64) {
    let wps = &script.waypoints;
    let first = wps[0];
    let last = wps[wps.len() - 1];
    if t <= first.t {
        return (first.x, first.y);
    }
    if t >= last.t {
        return (last.x, last.y);
    }
    // first index with w.t > t; it is in 1..len
    let i = wps.partition_point(|w| w.t <= t);
    let (a, b) = (wps[i - 1], wps[i]);
    let u = (t - a.t) / (b.t - a.t);
    (a.x + u * (b.x - a.x), a.y + u * (b.y - a.y))
}

/// Back-and-forth walk along a horizontal segment centered at `center`,
/// starting at its left end.
pub fn make_pacing_script(
    tag_id: impl Into<TagId>,
    center: (f64, f64),
    path_length_m: f64,
    speed_mps: f64,
    duration_s: f64,
) -> Result<TrajectoryScript, SimError> {
    if !(path_length_m > 0.0 && path_length_m.is_finite()) {
        return Err(invalid("path length must be positive"));
    }
    if !(speed_mps > 0.0 && speed_mps.is_finite()) {
        return Err(invalid("speed must be positive"));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(invalid("duration must be positive"));
    }
    let ends = [center.0 - path_length_m / 2.0, center.0 + path_length_m / 2.0];
    let leg = path_length_m / speed_mps;
    let eps = 1e-9 * duration_s.max(1.0);
    let mut waypoints = vec![Waypoint::new(0.0, ends[0], center.1)];
    let mut i = 1usize;
    loop {
        let t = i as f64 * leg;
        if t > duration_s + eps {
            break;
        }
        waypoints.push(Waypoint::new(t, ends[i % 2], center.1));
        i += 1;
    }
    let last_t = waypoints[waypoints.len() - 1].t;
    if duration_s - last_t > eps {
        // finish part-way through the current leg
        let from = ends[(i - 1) % 2];
        let to = ends[i % 2];
        let u = (duration_s - last_t) / leg;
        waypoints.push(Waypoint::new(duration_s, from + u * (to - from), center.1));
    }
    TrajectoryScript::new(tag_id, waypoints)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Per-receiver Gaussian standard deviation, dB.
    pub sigma_db: f64,
    /// Constant per-anchor offsets, dB.
    pub anchor_bias_db: BTreeMap<AnchorId, f64>,
    pub drop_probability: f64,
}

impl NoiseModel {
    pub fn gaussian(sigma_db: f64) -> Self {
        Self {
            sigma_db,
            anchor_bias_db: BTreeMap::new(),
            drop_probability: 0.0,
        }
    }

    pub fn noiseless() -> Self {
        Self::gaussian(0.0)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.sigma_db >= 0.0 && self.sigma_db.is_finite()) {
            return Err(invalid("sigma_db must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(invalid("drop_probability must be in [0, 1)"));
        }
        if self.anchor_bias_db.values().any(|b| !b.is_finite()) {
            return Err(invalid("anchor bias must be finite"));
        }
        Ok(())
    }

    pub fn bias(&self, anchor: &AnchorId) -> f64 {
        self.anchor_bias_db.get(anchor).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Width and height of the simulated floor, meters.
    pub area: (f64, f64),
    pub anchors: Vec<AnchorConfig<f64>>,
    pub tags: Vec<TrajectoryScript>,
    pub noise: NoiseModel,
    pub advertise_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
    /// Epoch time of `t = 0`, ms.
    pub start_ms: i64,
    pub d_min: f64,
    /// Anchors farther than this hear nothing. `None` disables the cutoff.
    pub max_range_m: Option<f64>,
}

impl Scenario {
    /// Scenario with 10 Hz advertising, no range cutoff and the default epoch.
    pub fn new(
        name: impl Into<String>,
        area: (f64, f64),
        anchors: Vec<AnchorConfig<f64>>,
        tags: Vec<TrajectoryScript>,
        noise: NoiseModel,
        duration_s: f64,
        seed: u64,
    ) -> Self {
        Self {
            name: name.into(),
            area,
            anchors,
            tags,
            noise,
            advertise_hz: DEFAULT_ADVERTISE_HZ,
            duration_s,
            seed,
            start_ms: DEFAULT_START_MS,
            d_min: DEFAULT_D_MIN_M,
            max_range_m: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let (w, h) = self.area;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(invalid("area must be positive"));
        }
        if !(self.advertise_hz > 0.0 && self.advertise_hz.is_finite()) {
            return Err(invalid("advertise_hz must be positive"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration must be positive"));
        }
        if !(self.d_min > 0.0) {
            return Err(invalid("d_min must be positive"));
        }
        if self.max_range_m.is_some_and(|r| !(r > 0.0)) {
            return Err(invalid("max_range_m must be positive"));
        }
        if self.anchors.is_empty() {
            return Err(invalid("no anchors"));
        }
        let mut seen = BTreeSet::new();
        for a in &self.anchors {
            a.validate().map_err(|e| invalid(e.to_string()))?;
            if !seen.insert(&a.anchor_id) {
                return Err(invalid(format!("duplicate anchor {}", a.anchor_id)));
            }
        }
        let mut tags = BTreeSet::new();
        for s in &self.tags {
            s.validate()?;
            if !tags.insert(&s.tag_id) {
                return Err(invalid(format!("duplicate tag {}", s.tag_id)));
            }
            if let Some(wp) = s
                .waypoints
                .iter()
                .find(|p| !(0.0..=w).contains(&p.x) || !(0.0..=h).contains(&p.y))
            {
                return Err(invalid(format!(
                    "tag {} waypoint ({}, {}) outside the area",
                    s.tag_id, wp.x, wp.y
                )));
            }
        }
        self.noise.validate()
    }

    /// Number of advertisements each tag sends.
    pub fn packet_count(&self) -> u64 {
        (self.duration_s * self.advertise_hz + 1e-9).floor() as u64
    }

    /// Epoch timestamp of advertisement `k`.
    pub fn packet_timestamp(&self, k: u64) -> i64 {
        self.start_ms + (k as f64 * 1000.0 / self.advertise_hz).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSample {
    pub tag_id: TagId,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Emission {
    pub reports: Vec<RawReport<f64>>,
    pub truth: Vec<GroundTruthSample>,
}

/// FNV-1a, then a splitmix finalizer. Stable across platforms and releases.
fn draw_seed(seed: u64, tag: &TagId, anchor: &AnchorId, receiver: u8, k: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(&seed.to_le_bytes());
    feed(tag.as_str().as_bytes());
    feed(&[0xff]);
    feed(anchor.as_str().as_bytes());
    feed(&[0xff, receiver]);
    feed(&k.to_le_bytes());
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates the report stream and 1 Hz ground truth of a scenario.
///
/// Reports are ordered by packet index, then tag, anchor and receiver as
/// listed in the scenario. Readings outside the valid report range are
/// treated as not received.
pub fn emit(scenario: &Scenario) -> Result<Emission, SimError> {
    scenario.validate()?;
    let mut out = Emission::default();
    let n = scenario.packet_count();
    for k in 0..n {
        let t = k as f64 / scenario.advertise_hz;
        let ts = scenario.packet_timestamp(k);
        for script in &scenario.tags {
            let pos = position_at(script, t);
            for anchor in &scenario.anchors {
                if let Some(range) = scenario.max_range_m {
                    if anchor.distance_to(pos, 0.0) > range {
                        continue;
                    }
                }
                let mean = pathloss_rss(anchor, pos, scenario.d_min) + scenario.noise.bias(&anchor.anchor_id);
                for receiver in 0..2u8 {
                    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(
                        scenario.seed,
                        &script.tag_id,
                        &anchor.anchor_id,
                        receiver,
                        k,
                    ));
                    let drop: f64 = rng.random();
                    let z: f64 = rng.sample(StandardNormal);
                    if drop < scenario.noise.drop_probability {
                        continue;
                    }
                    let rssi = mean + scenario.noise.sigma_db * z;
                    if !(RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&rssi) {
                        continue;
                    }
                    out.reports.push(RawReport {
                        anchor_id: anchor.anchor_id.clone(),
                        receiver_index: receiver,
                        tag_id: script.tag_id.clone(),
                        rssi,
                        timestamp: ts,
                    });
                }
            }
        }
    }
    let seconds = scenario.duration_s.floor() as u64;
    for script in &scenario.tags {
        for s in 0..seconds {
            let t = s as f64;
            let (x, y) = position_at(script, t);
            out.truth.push(GroundTruthSample {
                tag_id: script.tag_id.clone(),
                t,
                x,
                y,
            });
        }
    }
    Ok(out)
}
