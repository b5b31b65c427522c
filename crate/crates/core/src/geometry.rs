//! Coordinate frames, trajectories, and maneuver classification.
//!
//! Conventions used throughout the crate:
//! - Ego frame: `x` points forward, `y` points to the left, meters.
//! - Global frame: planar easting/northing (UTM-like), heading measured
//!   counterclockwise from the easting axis, normalized to `(-pi, pi]`.
//! - A trajectory stores only future waypoints. The initial waypoint at the
//!   ego origin is implicit and never stored; index `i` corresponds to time
//!   `(i + 1) * dt`.

use crate::error::{Error, Result};

/// Seconds between consecutive waypoints.
pub const DEFAULT_DT: f64 = 0.5;

/// Default number of future waypoints per trajectory.
pub const DEFAULT_HORIZON_STEPS: usize = 10;

/// A 2-D position in the ego frame: `x` forward, `y` left, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Waypoint { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Waypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A fixed-length sequence of future ego-frame waypoints at `dt`-second steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Waypoint>,
    dt: f64,
}

impl Trajectory {
    /// Builds a trajectory from future waypoints. Rejects empty sequences,
    /// non-finite coordinates, and non-positive `dt`.
    pub fn new(waypoints: Vec<Waypoint>, dt: f64) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::InvalidArgument(
                "trajectory must contain at least one waypoint".into(),
            ));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "trajectory dt must be finite and positive, got {dt}"
            )));
        }
        if !waypoints.iter().all(Waypoint::is_finite) {
            return Err(Error::NonFinite {
                context: "trajectory waypoints",
            });
        }
        Ok(Trajectory { waypoints, dt })
    }

    /// Convenience constructor from `(x, y)` pairs at the default step.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            points.iter().map(|&(x, y)| Waypoint::new(x, y)).collect(),
            DEFAULT_DT,
        )
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of stored (future) waypoints.
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction: at least one waypoint
    }

    /// Time offset of waypoint `i`, seconds ahead of the ego pose.
    pub fn time_at(&self, index: usize) -> f64 {
        (index as f64 + 1.0) * self.dt
    }

    /// Total polyline length from the implicit origin through all waypoints.
    pub fn path_length(&self) -> f64 {
        let mut prev = Waypoint::default();
        let mut total = 0.0;
        for w in &self.waypoints {
            total += prev.distance(w);
            prev = *w;
        }
        total
    }

    /// Returns a copy with every waypoint multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        Trajectory::new(
            self.waypoints
                .iter()
                .map(|w| Waypoint::new(scale * w.x, scale * w.y))
                .collect(),
            self.dt,
        )
    }
}

/// Planar global pose: easting/northing meters plus heading.
///
/// Heading is counterclockwise from the easting axis and stored normalized
/// to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2D {
    pub easting: f64,
    pub northing: f64,
    heading: f64,
}

impl Pose2D {
    pub fn new(easting: f64, northing: f64, heading: f64) -> Result<Self> {
        if !(easting.is_finite() && northing.is_finite() && heading.is_finite()) {
            return Err(Error::NonFinite { context: "pose" });
        }
        Ok(Pose2D {
            easting,
            northing,
            heading: normalize_angle(heading),
        })
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let a = angle.rem_euclid(two_pi); // [0, 2*pi)
    if a > std::f64::consts::PI {
        a - two_pi
    } else {
        a
    }
}

/// Coarse maneuver label used for balanced sampling buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ManeuverCategory {
    Straight,
    TurnLeft,
    TurnRight,
    Waiting,
}

impl ManeuverCategory {
    pub const ALL: [ManeuverCategory; 4] = [
        ManeuverCategory::Straight,
        ManeuverCategory::TurnLeft,
        ManeuverCategory::TurnRight,
        ManeuverCategory::Waiting,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ManeuverCategory::Straight => "Straight",
            ManeuverCategory::TurnLeft => "TurnLeft",
            ManeuverCategory::TurnRight => "TurnRight",
            ManeuverCategory::Waiting => "Waiting",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Straight" => Some(ManeuverCategory::Straight),
            "TurnLeft" => Some(ManeuverCategory::TurnLeft),
            "TurnRight" => Some(ManeuverCategory::TurnRight),
            "Waiting" => Some(ManeuverCategory::Waiting),
            _ => None,
        }
    }
}

/// Thresholds for [`classify_maneuver`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverThresholds {
    /// Trajectories with total path length below this are `Waiting`.
    pub waiting_path_len_m: f64,
    /// `|final y|` beyond this marks a turn (sign picks the side).
    pub lateral_thresh_m: f64,
}

impl Default for ManeuverThresholds {
    fn default() -> Self {
        ManeuverThresholds {
            waiting_path_len_m: 2.0,
            lateral_thresh_m: 2.0,
        }
    }
}

impl ManeuverThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.waiting_path_len_m > 0.0 && self.lateral_thresh_m > 0.0) {
            return Err(Error::InvalidArgument(
                "maneuver thresholds must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Converts global future positions into an ego-frame trajectory.
///
/// Each point `p` maps to `Rot(-heading) * (p - ego_position)`; with heading
/// measured from the easting axis this directly yields `x` forward, `y` left.
pub fn utm_to_ego(ego: &Pose2D, future_positions: &[(f64, f64)], dt: f64) -> Result<Trajectory> {
    if future_positions.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one future position required".into(),
        ));
    }
    let (sin_h, cos_h) = ego.heading.sin_cos();
    let mut waypoints = Vec::with_capacity(future_positions.len());
    for &(e, n) in future_positions {
        if !(e.is_finite() && n.is_finite()) {
            return Err(Error::NonFinite {
                context: "global position",
            });
        }
        let de = e - ego.easting;
        let dn = n - ego.northing;
        waypoints.push(Waypoint::new(
            cos_h * de + sin_h * dn,
            -sin_h * de + cos_h * dn,
        ));
    }
    Trajectory::new(waypoints, dt)
}

/// Inverse of [`utm_to_ego`]: maps ego-frame waypoints back to global
/// `(easting, northing)` pairs.
pub fn ego_to_utm(ego: &Pose2D, traj: &Trajectory) -> Vec<(f64, f64)> {
    let (sin_h, cos_h) = ego.heading.sin_cos();
    traj.waypoints()
        .iter()
        .map(|w| {
            (
                ego.easting + cos_h * w.x - sin_h * w.y,
                ego.northing + sin_h * w.x + cos_h * w.y,
            )
        })
        .collect()
}

/// Assigns a maneuver category:
/// `Waiting` if the polyline is shorter than the waiting threshold, else a
/// turn when the final leftward offset exceeds the lateral threshold, else
/// `Straight`.
pub fn classify_maneuver(traj: &Trajectory, thresholds: &ManeuverThresholds) -> ManeuverCategory {
    if traj.path_length() < thresholds.waiting_path_len_m {
        return ManeuverCategory::Waiting;
    }
    let final_y = traj.waypoints().last().expect("nonempty by construction").y;
    if final_y > thresholds.lateral_thresh_m {
        ManeuverCategory::TurnLeft
    } else if final_y < -thresholds.lateral_thresh_m {
        ManeuverCategory::TurnRight
    } else {
        ManeuverCategory::Straight
    }
}
