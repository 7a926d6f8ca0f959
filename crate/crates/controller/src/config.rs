//! Deployment and scenario configuration files (TOML).
//!
//! Both loaders accept either a filesystem path or the name of a bundled
//! configuration (`fig2-corridors` for deployments; `pacing-7m`,
//! `pacing-11m`, `corridor-walk` for scenarios).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wanderloc_core::simulator::DEFAULT_START_MS;
use wanderloc_core::{
    make_pacing_script, AnchorConfig, DetectorParams, MotionModel, NoiseModel, Scenario, TrackerConfig,
    TrajectoryScript, Waypoint,
};

const BUILTIN_DEPLOYMENTS: &[(&str, &str)] = &[("fig2-corridors", include_str!("../configs/fig2-corridors.toml"))];

const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("pacing-7m", include_str!("../scenarios/pacing-7m.toml")),
    ("pacing-11m", include_str!("../scenarios/pacing-11m.toml")),
    ("corridor-walk", include_str!("../scenarios/corridor-walk.toml")),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is neither a file nor a bundled configuration")]
    NotFound(String),
    #[error("syntax error in {origin}: {source}")]
    Syntax {
        origin: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(msg.to_string())
}

/// Reads `source` as a path if it exists, otherwise as a bundled name.
fn resolve(source: &str, builtins: &[(&str, &str)]) -> Result<(String, Option<PathBuf>), ConfigError> {
    let path = Path::new(source);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        return Ok((text, Some(path.to_owned())));
    }
    builtins
        .iter()
        .find(|(name, _)| *name == source)
        .map(|(_, text)| (text.to_string(), None))
        .ok_or_else(|| ConfigError::NotFound(source.to_owned()))
}

pub fn builtin_deployment_names() -> impl Iterator<Item = &'static str> {
    BUILTIN_DEPLOYMENTS.iter().map(|(n, _)| *n)
}

pub fn builtin_scenario_names() -> impl Iterator<Item = &'static str> {
    BUILTIN_SCENARIOS.iter().map(|(n, _)| *n)
}

fn default_p0() -> f64 {
    wanderloc_core::ekf::DEFAULT_P0_DBM
}
fn default_gamma() -> f64 {
    wanderloc_core::ekf::DEFAULT_GAMMA
}
fn default_d0() -> f64 {
    wanderloc_core::ekf::DEFAULT_D0_M
}
fn default_sigma_rss() -> f64 {
    wanderloc_core::ekf::DEFAULT_SIGMA_RSS_DB
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorEntry {
    pub id: String,
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_p0")]
    pub p0: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_d0")]
    pub d0: f64,
    #[serde(default = "default_sigma_rss")]
    pub sigma_rss: f64,
}

impl AnchorEntry {
    pub fn to_anchor(&self) -> Result<AnchorConfig<f64>, ConfigError> {
        AnchorConfig::new(self.id.as_str(), (self.x, self.y), self.p0, self.gamma, self.d0, self.sigma_rss)
            .map_err(invalid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSection {
    pub step_t: f64,
    pub sigma_a: f64,
}

impl Default for MotionSection {
    fn default() -> Self {
        Self {
            step_t: wanderloc_core::ekf::DEFAULT_STEP_T,
            sigma_a: wanderloc_core::ekf::DEFAULT_SIGMA_A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub min_anchors_for_update: usize,
    pub d_min: f64,
    pub init_covariance_diag: [f64; 4],
    /// A track with no measurements for this many seconds is dropped.
    pub max_coast_s: u32,
}

impl Default for TrackerSection {
    fn default() -> Self {
        Self {
            min_anchors_for_update: 1,
            d_min: wanderloc_core::ekf::DEFAULT_D_MIN_M,
            init_covariance_diag: wanderloc_core::ekf::DEFAULT_INIT_COVARIANCE_DIAG,
            max_coast_s: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub window_s: f64,
    pub stride_s: f64,
    pub min_distance_m: f64,
    pub min_loiter_ratio: f64,
    pub min_speed_mps: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorParams::<f64>::default();
        Self {
            window_s: d.window_s,
            stride_s: d.stride_s,
            min_distance_m: d.min_distance_m,
            min_loiter_ratio: d.min_loiter_ratio,
            min_speed_mps: d.min_speed_mps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub listen: SocketAddr,
    pub reorder_watermark_ms: i64,
    pub max_buffered_reports: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 7700)),
            reorder_watermark_ms: 2000,
            max_buffered_reports: 1_000_000,
        }
    }
}

/// Everything a controller needs to track tags in one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConfig {
    pub name: String,
    pub anchors: Vec<AnchorEntry>,
    #[serde(default)]
    pub motion: MotionSection,
    #[serde(default)]
    pub tracker: TrackerSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub ingest: IngestSection,
}

impl DeploymentConfig {
    /// Loads from a path or bundled name and validates.
    pub fn load(source: &str) -> Result<Self, ConfigError> {
        let (text, _) = resolve(source, BUILTIN_DEPLOYMENTS)?;
        Self::from_toml(&text, source)
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|err| ConfigError::Syntax {
            origin: origin.to_owned(),
            source: err,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tracker_config()?;
        self.detector_params()?;
        if self.ingest.reorder_watermark_ms < 0 {
            return Err(invalid("reorder_watermark_ms must be non-negative"));
        }
        if self.ingest.max_buffered_reports == 0 {
            return Err(invalid("max_buffered_reports must be positive"));
        }
        Ok(())
    }

    pub fn anchors(&self) -> Result<Vec<AnchorConfig<f64>>, ConfigError> {
        self.anchors.iter().map(AnchorEntry::to_anchor).collect()
    }

    pub fn tracker_config(&self) -> Result<TrackerConfig<f64>, ConfigError> {
        // the tracker advances exactly one averaging window per step
        if self.motion.step_t != 1.0 {
            return Err(invalid("motion.step_t must be 1.0 (one averaging window)"));
        }
        let motion = MotionModel::new(self.motion.step_t, self.motion.sigma_a).map_err(invalid)?;
        TrackerConfig::new(self.anchors()?, motion)
            .and_then(|c| c.with_min_anchors_for_update(self.tracker.min_anchors_for_update))
            .and_then(|c| c.with_d_min(self.tracker.d_min))
            .and_then(|c| c.with_init_covariance_diag(self.tracker.init_covariance_diag))
            .map_err(invalid)
    }

    pub fn detector_params(&self) -> Result<DetectorParams<f64>, ConfigError> {
        let d = &self.detector;
        let p = DetectorParams {
            window_s: d.window_s,
            stride_s: d.stride_s,
            min_distance_m: d.min_distance_m,
            min_loiter_ratio: d.min_loiter_ratio,
            min_speed_mps: d.min_speed_mps,
        };
        p.validate().map_err(invalid)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacingEntry {
    pub center: [f64; 2],
    pub path_length_m: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagEntry {
    pub id: String,
    /// `[t_s, x_m, y_m]` triples.
    #[serde(default)]
    pub waypoints: Vec<[f64; 3]>,
    #[serde(default)]
    pub pacing: Option<PacingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_db: f64,
    pub drop_probability: f64,
    pub anchor_bias_db: BTreeMap<String, f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            sigma_db: 4.0,
            drop_probability: 0.0,
            anchor_bias_db: BTreeMap::new(),
        }
    }
}

fn default_hz() -> f64 {
    wanderloc_core::simulator::DEFAULT_ADVERTISE_HZ
}
fn default_start_ms() -> i64 {
    DEFAULT_START_MS
}
fn default_d_min() -> f64 {
    wanderloc_core::ekf::DEFAULT_D_MIN_M
}

/// Simulation world description as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    /// Deployment path (relative to the scenario file) or bundled name.
    /// Ignored when `anchors` is given inline.
    #[serde(default)]
    pub deployment: Option<String>,
    #[serde(default)]
    pub anchors: Vec<AnchorEntry>,
    pub area: [f64; 2],
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default = "default_hz")]
    pub advertise_hz: f64,
    #[serde(default = "default_start_ms")]
    pub start_ms: i64,
    #[serde(default = "default_d_min")]
    pub d_min: f64,
    #[serde(default)]
    pub max_range_m: Option<f64>,
    #[serde(default)]
    pub noise: NoiseSection,
    pub tags: Vec<TagEntry>,
}

impl ScenarioFile {
    pub fn load(source: &str) -> Result<Self, ConfigError> {
        let (text, path) = resolve(source, BUILTIN_SCENARIOS)?;
        let mut file: Self = toml::from_str(&text).map_err(|err| ConfigError::Syntax {
            origin: source.to_owned(),
            source: err,
        })?;
        // make a relative deployment path relative to the scenario file
        if let (Some(dep), Some(path)) = (&file.deployment, path) {
            let candidate = path.parent().unwrap_or(Path::new(".")).join(dep);
            if candidate.is_file() {
                file.deployment = Some(candidate.to_string_lossy().into_owned());
            }
        }
        Ok(file)
    }

    pub fn anchors(&self) -> Result<Vec<AnchorConfig<f64>>, ConfigError> {
        if !self.anchors.is_empty() {
            return self.anchors.iter().map(AnchorEntry::to_anchor).collect();
        }
        match &self.deployment {
            Some(dep) => DeploymentConfig::load(dep)?.anchors(),
            None => Err(invalid("scenario needs either anchors or a deployment")),
        }
    }

    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let mut tags = Vec::with_capacity(self.tags.len());
        for t in &self.tags {
            let script = match (&t.pacing, t.waypoints.is_empty()) {
                (Some(p), true) => make_pacing_script(
                    t.id.as_str(),
                    (p.center[0], p.center[1]),
                    p.path_length_m,
                    p.speed_mps,
                    self.duration_s,
                ),
                (None, false) => TrajectoryScript::new(
                    t.id.as_str(),
                    t.waypoints.iter().map(|w| Waypoint::new(w[0], w[1], w[2])).collect(),
                ),
                _ => return Err(invalid(format!("tag {} needs exactly one of waypoints or pacing", t.id))),
            }
            .map_err(invalid)?;
            tags.push(script);
        }
        let noise = NoiseModel {
            sigma_db: self.noise.sigma_db,
            anchor_bias_db: self
                .noise
                .anchor_bias_db
                .iter()
                .map(|(k, v)| (k.as_str().into(), *v))
                .collect(),
            drop_probability: self.noise.drop_probability,
        };
        let scenario = Scenario {
            name: self.name.clone(),
            area: (self.area[0], self.area[1]),
            anchors: self.anchors()?,
            tags,
            noise,
            advertise_hz: self.advertise_hz,
            duration_s: self.duration_s,
            seed: self.seed,
            start_ms: self.start_ms,
            d_min: self.d_min,
            max_range_m: self.max_range_m,
        };
        scenario.validate().map_err(invalid)?;
        Ok(scenario)
    }
}
