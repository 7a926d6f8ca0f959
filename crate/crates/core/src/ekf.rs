//! Extended Kalman filter over a planar constant-velocity state.
//!
//! State layout is `[x, vx, y, vy]`. Prediction uses the discrete white noise
//! acceleration model; the correction step linearizes the log-distance path
//! loss model around the predicted position.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use thiserror::Error;

use crate::ids::AnchorId;
use crate::measurement::MeasurementFrame;
use crate::scalar::{lit, to_f64, Real};

pub const IX: usize = 0;
pub const IVX: usize = 1;
pub const IY: usize = 2;
pub const IVY: usize = 3;

pub const DEFAULT_P0_DBM: f64 = -59.0;
pub const DEFAULT_GAMMA: f64 = 3.5;
pub const DEFAULT_D0_M: f64 = 1.0;
pub const DEFAULT_SIGMA_RSS_DB: f64 = 4.0;
pub const DEFAULT_SIGMA_A: f64 = 0.5;
pub const DEFAULT_STEP_T: f64 = 1.0;
pub const DEFAULT_D_MIN_M: f64 = 0.1;
pub const DEFAULT_INIT_COVARIANCE_DIAG: [f64; 4] = [25.0, 1.0, 25.0, 1.0];
/// Innovation covariances whose Cholesky pivots fall below this are treated as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("frame has {got} anchors, {required} required for an update")]
    TooFewAnchors { got: usize, required: usize },
    #[error("anchor {0} is not configured")]
    UnknownAnchor(AnchorId),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("frame has no observations")]
    EmptyFrame,
    #[error("neither an estimate nor a frame was given")]
    NoInput,
}

fn invalid(msg: impl Into<String>) -> TrackerError {
    TrackerError::InvalidConfig(msg.into())
}

/// Kinematic state `[x, vx, y, vy]` with its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate<T: Real = f64> {
    pub state: Vector4<T>,
    pub covariance: Matrix4<T>,
    /// Milliseconds since epoch.
    pub timestamp: i64,
}

impl<T: Real> StateEstimate<T> {
    pub fn new(state: Vector4<T>, covariance: Matrix4<T>, timestamp: i64) -> Self {
        Self {
            state,
            covariance,
            timestamp,
        }
    }

    pub fn position(&self) -> (T, T) {
        (self.state[IX], self.state[IY])
    }

    pub fn velocity(&self) -> (T, T) {
        (self.state[IVX], self.state[IVY])
    }

    pub fn covariance_trace(&self) -> T {
        self.covariance.trace()
    }

    /// Largest absolute difference between `P` and `Pᵀ`.
    pub fn asymmetry(&self) -> T {
        (self.covariance - self.covariance.transpose()).amax()
    }

    /// Smallest eigenvalue of the (symmetric part of the) covariance.
    pub fn min_eigenvalue(&self) -> T {
        let sym = (self.covariance + self.covariance.transpose()) * lit::<T>(0.5);
        sym.symmetric_eigenvalues().min()
    }
}

/// Discrete white noise acceleration motion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel<T: Real = f64> {
    step_t: T,
    sigma_a: T,
}

impl<T: Real> MotionModel<T> {
    pub fn new(step_t: T, sigma_a: T) -> Result<Self, TrackerError> {
        if !(step_t > T::zero() && step_t <= lit(10.0)) {
            return Err(invalid(format!("step_T {} not in (0, 10]", to_f64(step_t))));
        }
        if !(sigma_a > T::zero() && sigma_a <= lit(100.0)) {
            return Err(invalid(format!("sigma_a {} not in (0, 100]", to_f64(sigma_a))));
        }
        Ok(Self { step_t, sigma_a })
    }

    pub fn step_t(&self) -> T {
        self.step_t
    }

    pub fn sigma_a(&self) -> T {
        self.sigma_a
    }

    pub fn step_ms(&self) -> i64 {
        (to_f64(self.step_t) * 1000.0).round() as i64
    }

    /// Block-diagonal constant-velocity transition.
    pub fn transition(&self) -> Matrix4<T> {
        let t = self.step_t;
        let mut f = Matrix4::identity();
        f[(IX, IVX)] = t;
        f[(IY, IVY)] = t;
        f
    }

    /// Per axis `σa² · [[T⁴/4, T³/2], [T³/2, T²]]`.
    pub fn process_noise(&self) -> Matrix4<T> {
        let t = self.step_t;
        let s2 = self.sigma_a * self.sigma_a;
        let t2 = t * t;
        let pp = t2 * t2 / lit(4.0) * s2;
        let pv = t2 * t / lit(2.0) * s2;
        let vv = t2 * s2;
        let mut q = Matrix4::zeros();
        for (p, v) in [(IX, IVX), (IY, IVY)] {
            q[(p, p)] = pp;
            q[(p, v)] = pv;
            q[(v, p)] = pv;
            q[(v, v)] = vv;
        }
        q
    }
}

impl Default for MotionModel<f64> {
    fn default() -> Self {
        Self {
            step_t: DEFAULT_STEP_T,
            sigma_a: DEFAULT_SIGMA_A,
        }
    }
}

/// Anchor placement and its path loss parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig<T: Real = f64> {
    pub anchor_id: AnchorId,
    pub position: (T, T),
    /// RSS at the reference distance, dBm.
    pub p0: T,
    pub gamma: T,
    /// Reference distance, meters.
    pub d0: T,
    /// Measurement noise standard deviation, dB.
    pub sigma_rss: T,
}

impl<T: Real> AnchorConfig<T> {
    pub fn new(
        anchor_id: impl Into<AnchorId>,
        position: (T, T),
        p0: T,
        gamma: T,
        d0: T,
        sigma_rss: T,
    ) -> Result<Self, TrackerError> {
        let a = Self {
            anchor_id: anchor_id.into(),
            position,
            p0,
            gamma,
            d0,
            sigma_rss,
        };
        a.validate()?;
        Ok(a)
    }

    /// Anchor with the default channel parameters (P0 −59 dBm, γ 3.5, d0 1 m, σ 4 dB).
    pub fn with_defaults(anchor_id: impl Into<AnchorId>, x: T, y: T) -> Self {
        Self {
            anchor_id: anchor_id.into(),
            position: (x, y),
            p0: lit(DEFAULT_P0_DBM),
            gamma: lit(DEFAULT_GAMMA),
            d0: lit(DEFAULT_D0_M),
            sigma_rss: lit(DEFAULT_SIGMA_RSS_DB),
        }
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        let id = &self.anchor_id;
        let finite = |v: T| to_f64(v).is_finite();
        if !(finite(self.position.0) && finite(self.position.1) && finite(self.p0)) {
            return Err(invalid(format!("anchor {id}: non-finite position or p0")));
        }
        if !(self.gamma > T::one() && self.gamma <= lit(6.0)) {
            return Err(invalid(format!("anchor {id}: gamma not in (1, 6]")));
        }
        if !(self.d0 > T::zero() && finite(self.d0)) {
            return Err(invalid(format!("anchor {id}: d0 must be positive")));
        }
        if !(self.sigma_rss > T::zero() && finite(self.sigma_rss)) {
            return Err(invalid(format!("anchor {id}: sigma_rss must be positive")));
        }
        Ok(())
    }

    pub fn distance_to(&self, position: (T, T), d_min: T) -> T {
        let dx = position.0 - self.position.0;
        let dy = position.1 - self.position.1;
        (dx * dx + dy * dy).sqrt().max(d_min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig<T: Real = f64> {
    anchors: Vec<AnchorConfig<T>>,
    motion: MotionModel<T>,
    min_anchors_for_update: usize,
    d_min: T,
    init_covariance_diag: [T; 4],
}

impl<T: Real> TrackerConfig<T> {
    pub fn new(anchors: Vec<AnchorConfig<T>>, motion: MotionModel<T>) -> Result<Self, TrackerError> {
        if anchors.is_empty() {
            return Err(invalid("no anchors configured"));
        }
        for a in &anchors {
            a.validate()?;
        }
        let mut ids: Vec<_> = anchors.iter().map(|a| &a.anchor_id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("duplicate anchor id {}", w[0])));
        }
        Ok(Self {
            anchors,
            motion,
            min_anchors_for_update: 1,
            d_min: lit(DEFAULT_D_MIN_M),
            init_covariance_diag: DEFAULT_INIT_COVARIANCE_DIAG.map(lit),
        })
    }

    pub fn with_min_anchors_for_update(mut self, n: usize) -> Result<Self, TrackerError> {
        if n == 0 {
            return Err(invalid("min_anchors_for_update must be at least 1"));
        }
        self.min_anchors_for_update = n;
        Ok(self)
    }

    pub fn with_d_min(mut self, d_min: T) -> Result<Self, TrackerError> {
        if !(d_min > T::zero() && to_f64(d_min).is_finite()) {
            return Err(invalid("d_min must be positive"));
        }
        self.d_min = d_min;
        Ok(self)
    }

    pub fn with_init_covariance_diag(mut self, diag: [T; 4]) -> Result<Self, TrackerError> {
        if diag.iter().any(|&v| !(v > T::zero() && to_f64(v).is_finite())) {
            return Err(invalid("initial covariance diagonal must be positive"));
        }
        self.init_covariance_diag = diag;
        Ok(self)
    }

    /// Replaces the measurement noise of every anchor.
    pub fn with_sigma_rss(mut self, sigma_rss: T) -> Result<Self, TrackerError> {
        for a in &mut self.anchors {
            a.sigma_rss = sigma_rss;
            a.validate()?;
        }
        Ok(self)
    }

    pub fn anchors(&self) -> &[AnchorConfig<T>] {
        &self.anchors
    }

    pub fn anchor(&self, id: &AnchorId) -> Option<&AnchorConfig<T>> {
        self.anchors.iter().find(|a| &a.anchor_id == id)
    }

    pub fn motion(&self) -> &MotionModel<T> {
        &self.motion
    }

    pub fn min_anchors_for_update(&self) -> usize {
        self.min_anchors_for_update
    }

    pub fn d_min(&self) -> T {
        self.d_min
    }

    pub fn init_covariance_diag(&self) -> [T; 4] {
        self.init_covariance_diag
    }

    /// Looks up the anchor of every frame observation, in frame order.
    pub fn anchors_for(&self, frame: &MeasurementFrame<T>) -> Result<Vec<AnchorConfig<T>>, TrackerError> {
        frame
            .observations
            .iter()
            .map(|o| {
                self.anchor(&o.anchor_id)
                    .cloned()
                    .ok_or_else(|| TrackerError::UnknownAnchor(o.anchor_id.clone()))
            })
            .collect()
    }
}

/// Log-distance path loss: `p0 − 10·γ·log10(max(d, d_min) / d0)`.
pub fn pathloss_rss<T: Real>(anchor: &AnchorConfig<T>, position: (T, T), d_min: T) -> T {
    let d = anchor.distance_to(position, d_min);
    anchor.p0 - lit::<T>(10.0) * anchor.gamma * (d / anchor.d0).log10()
}

pub fn expected_measurements<T: Real>(
    est: &StateEstimate<T>,
    anchors: &[AnchorConfig<T>],
    d_min: T,
) -> DVector<T> {
    let pos = est.position();
    DVector::from_iterator(anchors.len(), anchors.iter().map(|a| pathloss_rss(a, pos, d_min)))
}

/// Rows `[−c·(x−xₙ)/d², 0, −c·(y−yₙ)/d², 0]` with `c = 10·γₙ / ln 10`.
pub fn measurement_jacobian<T: Real>(
    est: &StateEstimate<T>,
    anchors: &[AnchorConfig<T>],
    d_min: T,
) -> DMatrix<T> {
    let (x, y) = est.position();
    let mut h = DMatrix::zeros(anchors.len(), 4);
    for (row, a) in anchors.iter().enumerate() {
        let d = a.distance_to((x, y), d_min);
        let c = lit::<T>(10.0) * a.gamma / T::ln_10();
        let d2 = d * d;
        h[(row, IX)] = -c * (x - a.position.0) / d2;
        h[(row, IY)] = -c * (y - a.position.1) / d2;
    }
    h
}

pub fn predict<T: Real>(est: &StateEstimate<T>, motion: &MotionModel<T>) -> StateEstimate<T> {
    let f = motion.transition();
    StateEstimate {
        state: f * est.state,
        covariance: f * est.covariance * f.transpose() + motion.process_noise(),
        timestamp: est.timestamp + motion.step_ms(),
    }
}

/// Measurement correction against one frame.
pub fn update<T: Real>(
    pred: &StateEstimate<T>,
    frame: &MeasurementFrame<T>,
    config: &TrackerConfig<T>,
) -> Result<StateEstimate<T>, TrackerError> {
    let anchors = config.anchors_for(frame)?;
    if anchors.len() < config.min_anchors_for_update {
        return Err(TrackerError::TooFewAnchors {
            got: anchors.len(),
            required: config.min_anchors_for_update,
        });
    }
    let n = anchors.len();
    let z = DVector::from_iterator(n, frame.observations.iter().map(|o| o.mean_rssi));
    let h_pred = expected_measurements(pred, &anchors, config.d_min);
    let h = measurement_jacobian(pred, &anchors, config.d_min);
    let p = DMatrix::from_iterator(4, 4, pred.covariance.iter().copied());
    let r = DMatrix::from_diagonal(&DVector::from_iterator(n, anchors.iter().map(|a| a.sigma_rss * a.sigma_rss)));

    let s = &h * &p * h.transpose() + r;
    let chol = s.cholesky().ok_or(TrackerError::SingularInnovation)?;
    let tol = lit::<T>(SINGULAR_TOLERANCE);
    if chol.l_dirty().diagonal().iter().any(|&l| l * l < tol) {
        return Err(TrackerError::SingularInnovation);
    }
    // K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ since P and S are symmetric.
    let k = chol.solve(&(&h * &p)).transpose();
    let innovation = z - h_pred;
    let dx = &k * innovation;

    let mut state = pred.state;
    for i in 0..4 {
        state[i] += dx[i];
    }
    let i_kh = DMatrix::<T>::identity(4, 4) - &k * &h;
    let p_new = i_kh * p;
    let p_sym = (&p_new + p_new.transpose()) * lit::<T>(0.5);
    let covariance = Matrix4::from_iterator(p_sym.iter().copied());

    Ok(StateEstimate {
        state,
        covariance,
        timestamp: pred.timestamp,
    })
}

/// Starts a track at the power-weighted centroid of the reporting anchors.
pub fn init_from_frame<T: Real>(
    frame: &MeasurementFrame<T>,
    config: &TrackerConfig<T>,
) -> Result<StateEstimate<T>, TrackerError> {
    if frame.is_empty() {
        return Err(TrackerError::EmptyFrame);
    }
    let anchors = config.anchors_for(frame)?;
    let max_rss = frame
        .observations
        .iter()
        .map(|o| o.mean_rssi)
        .fold(frame.observations[0].mean_rssi, |a, b| a.max(b));
    let ten = lit::<T>(10.0);
    let mut wsum = T::zero();
    let (mut x, mut y) = (T::zero(), T::zero());
    for (o, a) in frame.observations.iter().zip(&anchors) {
        // 10^(rss/10), scaled by the strongest anchor so weights stay normal
        let w = ten.powf((o.mean_rssi - max_rss) / ten);
        wsum += w;
        x += w * a.position.0;
        y += w * a.position.1;
    }
    let state = Vector4::new(x / wsum, T::zero(), y / wsum, T::zero());
    let covariance = Matrix4::from_diagonal(&Vector4::from(config.init_covariance_diag));
    Ok(StateEstimate::new(state, covariance, frame.window_start))
}

/// Why a usable-looking frame did not correct the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    TooFewAnchors,
    SingularInnovation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Initialized { anchors_used: usize },
    Updated { anchors_used: usize },
    /// No frame for this step.
    Coasted,
    /// Frame present but the update was skipped; the prediction is kept.
    Rejected(RejectReason),
}

impl StepKind {
    pub fn anchors_used(&self) -> usize {
        match *self {
            StepKind::Initialized { anchors_used } | StepKind::Updated { anchors_used } => anchors_used,
            StepKind::Coasted | StepKind::Rejected(_) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T: Real = f64> {
    pub estimate: StateEstimate<T>,
    pub kind: StepKind,
}

/// One filter iteration.
pub fn step<T: Real>(
    est: Option<&StateEstimate<T>>,
    frame: Option<&MeasurementFrame<T>>,
    config: &TrackerConfig<T>,
) -> Result<StepOutcome<T>, TrackerError> {
    match (est, frame) {
        (None, None) => Err(TrackerError::NoInput),
        (None, Some(f)) => Ok(StepOutcome {
            estimate: init_from_frame(f, config)?,
            kind: StepKind::Initialized { anchors_used: f.len() },
        }),
        (Some(e), None) => Ok(StepOutcome {
            estimate: predict(e, config.motion()),
            kind: StepKind::Coasted,
        }),
        (Some(e), Some(f)) => {
            let pred = predict(e, config.motion());
            match update(&pred, f, config) {
                Ok(estimate) => Ok(StepOutcome {
                    estimate,
                    kind: StepKind::Updated { anchors_used: f.len() },
                }),
                Err(TrackerError::TooFewAnchors { .. }) => Ok(StepOutcome {
                    estimate: pred,
                    kind: StepKind::Rejected(RejectReason::TooFewAnchors),
                }),
                Err(TrackerError::SingularInnovation) => Ok(StepOutcome {
                    estimate: pred,
                    kind: StepKind::Rejected(RejectReason::SingularInnovation),
                }),
                Err(e) => Err(e),
            }
        }
    }
}

/// Owns the running estimate of one tag.
#[derive(Debug, Clone)]
pub struct Tracker<T: Real = f64> {
    config: TrackerConfig<T>,
    estimate: Option<StateEstimate<T>>,
}

impl<T: Real> Tracker<T> {
    pub fn new(config: TrackerConfig<T>) -> Self {
        Self { config, estimate: None }
    }

    pub fn config(&self) -> &TrackerConfig<T> {
        &self.config
    }

    pub fn estimate(&self) -> Option<&StateEstimate<T>> {
        self.estimate.as_ref()
    }

    pub fn reset(&mut self) {
        self.estimate = None;
    }

    /// Advances one window. Returns `Ok(None)` when there is nothing to do
    /// (no track yet and no frame).
    pub fn process(&mut self, frame: Option<&MeasurementFrame<T>>) -> Result<Option<StepOutcome<T>>, TrackerError> {
        if self.estimate.is_none() && frame.is_none() {
            return Ok(None);
        }
        let out = step(self.estimate.as_ref(), frame, &self.config)?;
        self.estimate = Some(out.estimate.clone());
        Ok(Some(out))
    }
}
