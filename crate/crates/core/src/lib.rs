//! BLE received-signal-strength indoor tracking.
//!
//! - [`measurement`]: per-packet and per-second RSS averaging into frames
//! - [`ekf`]: constant-velocity extended Kalman filter with a log-distance
//!   path loss measurement model
//! - [`simulator`]: scripted tags and synthetic per-receiver reports
//! - [`analytics`]: path statistics and wandering-episode detection
//!
//! The filter and analytics are generic over [`Real`] (`f32` or `f64`); the
//! `*F32` / `*F64` aliases below name the common instantiations.

pub mod analytics;
pub mod ekf;
pub mod ids;
pub mod measurement;
pub mod scalar;
pub mod simulator;

pub use analytics::{
    detect_episodes, path_length, spatial_extent, summarize, AnalyticsError, DetectorParams, PathStats, TrackPoint,
    Trajectory, WanderEpisode,
};
pub use ekf::{
    expected_measurements, init_from_frame, measurement_jacobian, pathloss_rss, predict, step, update, AnchorConfig,
    MotionModel, RejectReason, StateEstimate, StepKind, StepOutcome, Tracker, TrackerConfig, TrackerError,
};
pub use ids::{AnchorId, TagId};
pub use measurement::{
    assemble_frame, packet_mean, window_average, AnchorObservation, MeasurementError, MeasurementFrame,
    PacketObservation, RawReport, WindowAccumulator,
};
pub use scalar::Real;
pub use simulator::{
    emit, make_pacing_script, position_at, Emission, GroundTruthSample, NoiseModel, Scenario, SimError,
    TrajectoryScript, Waypoint,
};

pub type StateEstimateF64 = StateEstimate<f64>;
pub type StateEstimateF32 = StateEstimate<f32>;
pub type TrackerF64 = Tracker<f64>;
pub type TrackerF32 = Tracker<f32>;
pub type TrackerConfigF64 = TrackerConfig<f64>;
pub type TrackerConfigF32 = TrackerConfig<f32>;
pub type AnchorConfigF64 = AnchorConfig<f64>;
pub type AnchorConfigF32 = AnchorConfig<f32>;
pub type MeasurementFrameF64 = MeasurementFrame<f64>;
pub type MeasurementFrameF32 = MeasurementFrame<f32>;
pub type TrajectoryF64 = Trajectory<f64>;
pub type TrajectoryF32 = Trajectory<f32>;
pub type WanderEpisodeF64 = WanderEpisode<f64>;
pub type WanderEpisodeF32 = WanderEpisode<f32>;
