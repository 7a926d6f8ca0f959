//! Trajectory statistics and wandering detection.
//!
//! Wandering shows up as a lot of walking inside a small footprint: the
//! detector slides a fixed window over the track and flags windows whose
//! path length is long in absolute terms, long relative to the window's
//! bounding-box diagonal, and covered at walking pace. Overlapping or
//! touching flagged windows are merged into episodes.

use thiserror::Error;

use crate::ids::TagId;
use crate::scalar::{lit, to_f64, Real};

/// Floor on the extent in the loiter ratio, meters.
pub const EXTENT_FLOOR_M: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("trajectory has no points")]
    Empty,
    #[error("trajectory point {0} is not finite")]
    NonFinite(usize),
    #[error("trajectory time decreases at point {0}")]
    TimeNotMonotone(usize),
    #[error("trajectory spans {span_s} s, shorter than the {window_s} s detection window")]
    TooShort { span_s: f64, window_s: f64 },
    #[error("invalid detector parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint<T: Real = f64> {
    /// Seconds.
    pub t: T,
    pub x: T,
    pub y: T,
}

impl<T: Real> TrackPoint<T> {
    pub fn new(t: T, x: T, y: T) -> Self {
        Self { t, x, y }
    }

    fn dist(&self, other: &Self) -> T {
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real = f64> {
    tag_id: TagId,
    points: Vec<TrackPoint<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(tag_id: impl Into<TagId>, points: Vec<TrackPoint<T>>) -> Result<Self, AnalyticsError> {
        if points.is_empty() {
            return Err(AnalyticsError::Empty);
        }
        for (i, p) in points.iter().enumerate() {
            if !(to_f64(p.t).is_finite() && to_f64(p.x).is_finite() && to_f64(p.y).is_finite()) {
                return Err(AnalyticsError::NonFinite(i));
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(AnalyticsError::TimeNotMonotone(i + 1));
        }
        Ok(Self {
            tag_id: tag_id.into(),
            points,
        })
    }

    pub fn tag_id(&self) -> &TagId {
        &self.tag_id
    }

    pub fn points(&self) -> &[TrackPoint<T>] {
        &self.points
    }

    pub fn duration(&self) -> T {
        self.points[self.points.len() - 1].t - self.points[0].t
    }

    /// Points with `t` in `[start, end]`.
    pub fn span(&self, start: T, end: T) -> &[TrackPoint<T>] {
        let lo = self.points.partition_point(|p| p.t < start);
        let hi = self.points.partition_point(|p| p.t <= end);
        &self.points[lo..hi.max(lo)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStats<T: Real = f64> {
    pub length_m: T,
    pub duration_s: T,
    /// Bounding-box diagonal.
    pub extent_m: T,
    pub loiter_ratio: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WanderEpisode<T: Real = f64> {
    pub tag_id: TagId,
    pub start_t: T,
    pub end_t: T,
    pub distance_m: T,
    pub extent_m: T,
    pub mean_speed_mps: T,
}

impl<T: Real> WanderEpisode<T> {
    pub fn duration(&self) -> T {
        self.end_t - self.start_t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams<T: Real = f64> {
    pub window_s: T,
    pub stride_s: T,
    pub min_distance_m: T,
    pub min_loiter_ratio: T,
    pub min_speed_mps: T,
}

impl<T: Real> Default for DetectorParams<T> {
    fn default() -> Self {
        Self {
            window_s: lit(120.0),
            stride_s: lit(10.0),
            min_distance_m: lit(40.0),
            min_loiter_ratio: lit(4.0),
            min_speed_mps: lit(0.2),
        }
    }
}

impl<T: Real> DetectorParams<T> {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if !(self.window_s > T::zero()) {
            return Err(AnalyticsError::InvalidParams("window_s must be positive"));
        }
        if !(self.stride_s > T::zero()) {
            return Err(AnalyticsError::InvalidParams("stride_s must be positive"));
        }
        if !(self.min_distance_m >= T::zero() && self.min_loiter_ratio >= T::zero() && self.min_speed_mps >= T::zero())
        {
            return Err(AnalyticsError::InvalidParams("thresholds must be non-negative"));
        }
        Ok(())
    }
}

fn length_of<T: Real>(points: &[TrackPoint<T>]) -> T {
    points
        .windows(2)
        .fold(T::zero(), |acc, w| acc + w[0].dist(&w[1]))
}

fn extent_of<T: Real>(points: &[TrackPoint<T>]) -> T {
    let Some(first) = points.first() else {
        return T::zero();
    };
    let (mut x0, mut x1, mut y0, mut y1) = (first.x, first.x, first.y, first.y);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    (w * w + h * h).sqrt()
}

fn loiter_ratio<T: Real>(length: T, extent: T) -> T {
    length / extent.max(lit(EXTENT_FLOOR_M))
}

/// Sum of distances between consecutive points.
pub fn path_length<T: Real>(traj: &Trajectory<T>) -> T {
    length_of(&traj.points)
}

/// Diagonal of the axis-aligned bounding box.
pub fn spatial_extent<T: Real>(traj: &Trajectory<T>) -> T {
    extent_of(&traj.points)
}

pub fn summarize<T: Real>(traj: &Trajectory<T>) -> PathStats<T> {
    let length_m = path_length(traj);
    let extent_m = spatial_extent(traj);
    PathStats {
        length_m,
        duration_s: traj.duration(),
        extent_m,
        loiter_ratio: loiter_ratio(length_m, extent_m),
    }
}

/// Sliding-window wandering detection.
///
/// Returns [`AnalyticsError::TooShort`] when the trajectory does not span a
/// single window; callers treat that as "no episodes".
pub fn detect_episodes<T: Real>(
    traj: &Trajectory<T>,
    params: &DetectorParams<T>,
) -> Result<Vec<WanderEpisode<T>>, AnalyticsError> {
    params.validate()?;
    let span = traj.duration();
    if span < params.window_s {
        return Err(AnalyticsError::TooShort {
            span_s: to_f64(span),
            window_s: to_f64(params.window_s),
        });
    }
    let t0 = traj.points[0].t;
    let t_last = traj.points[traj.points.len() - 1].t;
    let eps = lit::<T>(1e-9) * (T::one() + t_last.abs());

    let mut flagged: Vec<(T, T)> = Vec::new();
    let mut k = 0usize;
    loop {
        let start = t0 + params.stride_s * lit::<T>(k as f64);
        let end = start + params.window_s;
        if end > t_last + eps {
            break;
        }
        let pts = traj.span(start, end);
        let len = length_of(pts);
        let positive = len >= params.min_distance_m
            && loiter_ratio(len, extent_of(pts)) >= params.min_loiter_ratio
            && len / params.window_s >= params.min_speed_mps;
        if positive {
            match flagged.last_mut() {
                Some(last) if start <= last.1 => last.1 = end,
                _ => flagged.push((start, end)),
            }
        }
        k += 1;
    }

    Ok(flagged
        .into_iter()
        .map(|(start, end)| {
            let pts = traj.span(start, end);
            let distance_m = length_of(pts);
            WanderEpisode {
                tag_id: traj.tag_id.clone(),
                start_t: start,
                end_t: end,
                distance_m,
                extent_m: extent_of(pts),
                mean_speed_mps: distance_m / (end - start),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(points: &[(f64, f64, f64)]) -> Trajectory<f64> {
        Trajectory::new("T1", points.iter().map(|&(t, x, y)| TrackPoint::new(t, x, y)).collect()).unwrap()
    }

    fn square() -> Trajectory<f64> {
        traj(&[(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (2.0, 1.0, 1.0), (3.0, 0.0, 1.0), (4.0, 0.0, 0.0)])
    }

    /// Back and forth along [x0, x0+len] at `speed`, sampled every `dt`.
    fn pacing(len: f64, speed: f64, duration: f64, dt: f64) -> Trajectory<f64> {
        let n = (duration / dt).round() as usize;
        let leg = len / speed;
        let pts: Vec<_> = (0..=n)
            .map(|i| {
                let t = i as f64 * dt;
                let phase = (t / leg).floor() as u64;
                let u = t / leg - phase as f64;
                let x = if phase.is_multiple_of(2) { u * len } else { (1.0 - u) * len };
                (t, x, 1.0)
            })
            .collect();
        traj(&pts)
    }

    #[test]
    fn construction_errors() {
        assert_eq!(Trajectory::<f64>::new("T", vec![]), Err(AnalyticsError::Empty));
        assert_eq!(
            Trajectory::new("T", vec![TrackPoint::new(1.0, 0.0, 0.0), TrackPoint::new(0.5, 0.0, 0.0)]),
            Err(AnalyticsError::TimeNotMonotone(1))
        );
        assert_eq!(
            Trajectory::new("T", vec![TrackPoint::new(0.0, f64::NAN, 0.0)]),
            Err(AnalyticsError::NonFinite(0))
        );
    }

    #[test]
    fn lengths() {
        assert_eq!(path_length(&traj(&[(0.0, 3.0, 3.0)])), 0.0);
        assert_eq!(path_length(&square()), 4.0);
    }

    #[test]
    fn pacing_length_matches_traversals() {
        // 400 m / 7 m = 57.14 traversals, sampled at 10 Hz
        let t = pacing(7.0, 400.0 / 600.0, 600.0, 0.1);
        let oracle = 600.0 * (400.0 / 600.0);
        assert!((path_length(&t) - oracle).abs() < 0.5, "{}", path_length(&t));
    }

    #[test]
    fn extents() {
        assert_eq!(spatial_extent(&traj(&[(0.0, 1.0, 1.0)])), 0.0);
        assert_eq!(spatial_extent(&traj(&[(0.0, 0.0, 0.0), (1.0, 3.0, 4.0)])), 5.0);

        // pacing along 7 m with bounded lateral wobble
        let pts: Vec<_> = (0..=600)
            .map(|i| {
                let t = i as f64;
                let u = t % 20.0;
                let x = if u < 10.0 { u * 0.7 } else { (20.0 - u) * 0.7 };
                let y = 1.0 + 0.5 * (t * 1.7).sin();
                (t, x, y)
            })
            .collect();
        let tr = traj(&pts);
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().map(|p| (p.1, p.2)).unzip();
        let fold = |v: &[f64]| (v.iter().cloned().fold(f64::MAX, f64::min), v.iter().cloned().fold(f64::MIN, f64::max));
        let (x0, x1) = fold(&xs);
        let (y0, y1) = fold(&ys);
        let oracle = (x1 - x0).hypot(y1 - y0);
        assert!((spatial_extent(&tr) - oracle).abs() < 1e-12);
        assert!((7.0..=7.2).contains(&spatial_extent(&tr)), "{}", spatial_extent(&tr));
    }

    #[test]
    fn summaries() {
        let single = summarize(&traj(&[(5.0, 1.0, 1.0)]));
        assert_eq!(single, PathStats { length_m: 0.0, duration_s: 0.0, extent_m: 0.0, loiter_ratio: 0.0 });
        let sq = summarize(&square());
        assert_eq!(sq.length_m, 4.0);
        assert_eq!(sq.duration_s, 4.0);
        assert!((sq.extent_m - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn straight_walk_is_not_wandering() {
        let pts: Vec<_> = (0..=120).map(|i| (i as f64, i as f64 * 100.0 / 120.0, 1.0)).collect();
        assert!(detect_episodes(&traj(&pts), &DetectorParams::default()).unwrap().is_empty());
    }

    #[test]
    fn stationary_tag_is_not_wandering() {
        let pts: Vec<_> = (0..=600)
            .map(|i| {
                let t = i as f64;
                (t, 5.0 + 0.02 * (t * 2.3).sin(), 5.0 + 0.02 * (t * 1.1).cos())
            })
            .collect();
        assert!(detect_episodes(&traj(&pts), &DetectorParams::default()).unwrap().is_empty());
    }

    #[test]
    fn pacing_yields_one_episode() {
        let t = pacing(7.0, 0.6667, 600.0, 1.0);
        let eps = detect_episodes(&t, &DetectorParams::default()).unwrap();
        assert_eq!(eps.len(), 1);
        let e = &eps[0];
        assert!(e.duration() >= 0.8 * 600.0);
        assert!((e.distance_m - 400.0).abs() <= 0.25 * 400.0);
        assert!(e.extent_m < 7.5);
        assert!(e.end_t > e.start_t);
    }

    #[test]
    fn pacing_inside_walks_is_bounded_episode() {
        // walk 60 s, pace 300 s, walk 60 s
        let mut pts = Vec::new();
        for i in 0..=420 {
            let t = i as f64;
            let x = if t < 60.0 {
                t
            } else if t < 360.0 {
                let u = (t - 60.0) % 20.0;
                60.0 + if u < 10.0 { u * 0.7 } else { (20.0 - u) * 0.7 }
            } else {
                60.0 + (t - 360.0)
            };
            pts.push((t, x, 0.0));
        }
        let eps = detect_episodes(&traj(&pts), &DetectorParams::default()).unwrap();
        assert_eq!(eps.len(), 1);
        assert!(eps[0].start_t >= 0.0 && eps[0].end_t <= 420.0);
        assert!(eps[0].distance_m >= 40.0);
    }

    #[test]
    fn too_short() {
        let pts: Vec<_> = (0..60).map(|i| (i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            detect_episodes(&traj(&pts), &DetectorParams::default()),
            Err(AnalyticsError::TooShort { .. })
        ));
    }

    #[test]
    fn params_validation() {
        let p = DetectorParams::<f64> {
            stride_s: 0.0,
            ..Default::default()
        };
        assert!(detect_episodes(&square(), &p).is_err());
    }

    #[test]
    fn works_in_f32() {
        let pts: Vec<TrackPoint<f32>> = (0..=600)
            .map(|i| {
                let t = i as f32;
                let u = t % 20.0;
                TrackPoint::new(t, if u < 10.0 { u * 0.7 } else { (20.0 - u) * 0.7 }, 0.0)
            })
            .collect();
        let tr = Trajectory::new("T", pts).unwrap();
        assert_eq!(detect_episodes(&tr, &DetectorParams::default()).unwrap().len(), 1);
    }
}
