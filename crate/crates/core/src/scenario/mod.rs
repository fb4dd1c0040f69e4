//! World snapshots in the ego frame, agent future-state prediction and the
//! procedural scenario corpus.

mod corpus;
mod expert;
mod generate;

pub use corpus::{load_corpus, load_corpus_from_str, save_corpus, scenario_to_json_line};
pub use generate::{generate_scenarios, Family, ALL_FAMILIES};

use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff, box_in_polygon, footprint_at, normalize_angle, OrientedBox, Polygon, Pose2D, Vec2};

/// Number of future waypoints in a trajectory.
pub const HORIZON_STEPS: usize = 8;
/// Spacing between waypoints and between ground-truth track samples, seconds.
pub const STEP_DT: f64 = 0.5;
/// Planning horizon, seconds.
pub const HORIZON_S: f64 = HORIZON_STEPS as f64 * STEP_DT;
/// Ground-truth track samples at t = 0.0, 0.5, ..., 4.0 s.
pub const TRACK_SAMPLES: usize = HORIZON_STEPS + 1;
/// Past poses at t = -1.5, -1.0, -0.5, 0.0 s.
pub const HISTORY_LEN: usize = 4;
/// Sanity bound on waypoint coordinates, meters.
pub const COORD_BOUND: f64 = 200.0;

pub const DEFAULT_EGO_LENGTH: f64 = 4.6;
pub const DEFAULT_EGO_WIDTH: f64 = 1.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NavCommand {
    GoStraight,
    TurnLeft,
    TurnRight,
}

impl NavCommand {
    pub fn index(self) -> usize {
        match self {
            NavCommand::GoStraight => 0,
            NavCommand::TurnLeft => 1,
            NavCommand::TurnRight => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NavCommand::GoStraight => "GO STRAIGHT",
            NavCommand::TurnLeft => "TURN LEFT",
            NavCommand::TurnRight => "TURN RIGHT",
        }
    }
}

/// How future agent boxes are obtained when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PerceptionMode {
    /// Constant-velocity extrapolation of the t=0 box.
    Kinematic,
    /// Interpolated ground-truth future track.
    #[default]
    GtOracle,
}

impl std::str::FromStr for PerceptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kinematic" => Ok(PerceptionMode::Kinematic),
            "gt_oracle" | "gt-oracle" | "oracle" => Ok(PerceptionMode::GtOracle),
            other => Err(Error::config(format!("unknown perception mode `{other}`"))),
        }
    }
}

/// A traffic participant: its t=0 state, velocity, and optional future track.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub bbox: OrientedBox,
    pub velocity: Vec2,
    pub gt_track: Option<Vec<OrientedBox>>,
}

impl AgentTrack {
    pub fn validate(&self) -> Result<()> {
        if !self.velocity.x.is_finite() || !self.velocity.y.is_finite() {
            return Err(Error::data("agent velocity must be finite"));
        }
        if let Some(track) = &self.gt_track {
            if track.len() != TRACK_SAMPLES {
                return Err(Error::data(format!(
                    "gt_track must have {TRACK_SAMPLES} samples, got {}",
                    track.len()
                )));
            }
            let first = &track[0];
            if track.iter().any(|b| b.length != first.length || b.width != first.width) {
                return Err(Error::data("gt_track boxes must keep constant length/width"));
            }
        }
        Ok(())
    }
}

/// Predicted box of `agent` at time `t` seconds under `mode`.
pub fn agent_box_at(agent: &AgentTrack, t: f64, mode: PerceptionMode) -> Result<OrientedBox> {
    if !(0.0..=HORIZON_S).contains(&t) {
        return Err(Error::config(format!("query time {t} outside [0, {HORIZON_S}]")));
    }
    match mode {
        PerceptionMode::Kinematic => Ok(agent.bbox.with_center(
            agent.bbox.center_x + agent.velocity.x * t,
            agent.bbox.center_y + agent.velocity.y * t,
        )),
        PerceptionMode::GtOracle => {
            let track = agent
                .gt_track
                .as_ref()
                .ok_or_else(|| Error::config("GT_ORACLE perception requires every agent to carry gt_track"))?;
            Ok(interpolate_track(track, t))
        }
    }
}

fn interpolate_track(track: &[OrientedBox], t: f64) -> OrientedBox {
    let pos = t / STEP_DT;
    let lo = (pos.floor() as usize).min(TRACK_SAMPLES - 1);
    let hi = (lo + 1).min(TRACK_SAMPLES - 1);
    let frac = pos - lo as f64;
    let (a, b) = (&track[lo], &track[hi]);
    if lo == hi || frac == 0.0 {
        return a.clone();
    }
    let lerp = |u: f64, v: f64| u + (v - u) * frac;
    OrientedBox {
        center_x: lerp(a.center_x, b.center_x),
        center_y: lerp(a.center_y, b.center_y),
        center_z: lerp(a.center_z, b.center_z),
        heading: normalize_angle(a.heading + frac * angle_diff(b.heading, a.heading)),
        ..a.clone()
    }
}

/// Exactly eight future poses at t = 0.5, 1.0, ..., 4.0 s.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: [Pose2D; HORIZON_STEPS],
}

impl Trajectory {
    pub fn new(points: Vec<Pose2D>) -> Result<Self> {
        let points: [Pose2D; HORIZON_STEPS] = points.try_into().map_err(|v: Vec<Pose2D>| {
            Error::data(format!(
                "trajectory needs exactly {HORIZON_STEPS} points, got {}",
                v.len()
            ))
        })?;
        for p in &points {
            if !p.is_finite() {
                return Err(Error::data("trajectory coordinates must be finite"));
            }
            if p.x.abs() > COORD_BOUND || p.y.abs() > COORD_BOUND {
                return Err(Error::data(format!(
                    "trajectory point ({}, {}) exceeds the {COORD_BOUND} m bound",
                    p.x, p.y
                )));
            }
        }
        Ok(Self { points })
    }

    /// Builds poses from positions, deriving each heading from the direction
    /// to the next point; the last heading repeats the previous one. A point
    /// that does not move keeps the preceding heading.
    pub fn from_positions(positions: &[Vec2]) -> Result<Self> {
        let n = positions.len();
        let mut headings = vec![0.0; n];
        let mut last = 0.0;
        for k in 0..n {
            if k + 1 < n {
                let d = positions[k + 1].sub(positions[k]);
                if d.norm() > 1e-9 {
                    last = d.y.atan2(d.x);
                }
            }
            headings[k] = last;
        }
        Self::new(
            positions
                .iter()
                .zip(headings)
                .map(|(p, h)| Pose2D::new(p.x, p.y, h))
                .collect(),
        )
    }

    pub fn points(&self) -> &[Pose2D; HORIZON_STEPS] {
        &self.points
    }

    pub fn endpoint(&self) -> Pose2D {
        self.points[HORIZON_STEPS - 1]
    }

    /// Time stamp of waypoint `k` (0-based).
    pub fn time_of(k: usize) -> f64 {
        (k + 1) as f64 * STEP_DT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub ego_history: [Pose2D; HISTORY_LEN],
    pub ego_speed: f64,
    pub agents: Vec<AgentTrack>,
    pub drivable_area: Polygon,
    pub centerline: Vec<Vec2>,
    pub nav_command: NavCommand,
    pub gt_trajectory: Option<Trajectory>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let anchor = self.ego_history[HISTORY_LEN - 1];
        if anchor.x.abs() > 1e-9 || anchor.y.abs() > 1e-9 || anchor.heading.abs() > 1e-9 {
            return Err(Error::data(format!(
                "scenario {}: ego_history must end at the origin",
                self.id
            )));
        }
        if !self.ego_speed.is_finite() || self.ego_speed < 0.0 {
            return Err(Error::data(format!("scenario {}: invalid ego_speed", self.id)));
        }
        if self.centerline.len() < 2 {
            return Err(Error::data(format!(
                "scenario {}: centerline needs at least 2 points",
                self.id
            )));
        }
        if self.centerline[0].norm() > 1.0 {
            return Err(Error::data(format!(
                "scenario {}: centerline must start within 1 m of the origin",
                self.id
            )));
        }
        let origin = footprint_at(&Pose2D::origin(), DEFAULT_EGO_LENGTH, DEFAULT_EGO_WIDTH);
        if !box_in_polygon(&origin, &self.drivable_area) {
            return Err(Error::data(format!(
                "scenario {}: drivable area does not contain the ego footprint",
                self.id
            )));
        }
        for agent in &self.agents {
            agent.validate()?;
        }
        Ok(())
    }

    /// Arc-length of the centerline up to the projection of `p`.
    pub fn progress_along_centerline(&self, p: Vec2) -> f64 {
        project_on_polyline(&self.centerline, p).0
    }

    /// Lateral position of the centerline at longitudinal coordinate `x`
    /// (clamped to the polyline's extent).
    pub fn centerline_y_at(&self, x: f64) -> f64 {
        let line = &self.centerline;
        if x <= line[0].x {
            return line[0].y;
        }
        for w in line.windows(2) {
            if x <= w[1].x && w[1].x > w[0].x {
                let t = (x - w[0].x) / (w[1].x - w[0].x);
                return w[0].y + t * (w[1].y - w[0].y);
            }
        }
        line[line.len() - 1].y
    }
}

/// Nearest-point projection onto a polyline. Returns `(arc_length, distance)`.
/// Ties resolve to the earliest segment.
pub fn project_on_polyline(line: &[Vec2], p: Vec2) -> (f64, f64) {
    let mut best = (0.0, f64::INFINITY);
    let mut walked = 0.0;
    for w in line.windows(2) {
        let seg = w[1].sub(w[0]);
        let len = seg.norm();
        let t = if len > 0.0 {
            (p.sub(w[0]).dot(seg) / (len * len)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let foot = w[0].add(seg.scale(t));
        let dist = p.sub(foot).norm();
        if dist < best.1 {
            best = (walked + t * len, dist);
        }
        walked += len;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn agent(vx: f64, vy: f64) -> AgentTrack {
        let bbox = OrientedBox::new(10.0, 1.0, 0.8, 4.5, 1.9, 1.6, 0.0, "vehicle").unwrap();
        let track = (0..TRACK_SAMPLES)
            .map(|i| {
                let t = i as f64 * STEP_DT;
                let mut b = bbox.with_center(10.0 + 2.0 * t, 1.0);
                b.heading = normalize_angle(PI - 0.1 + 0.4 * t);
                b
            })
            .collect();
        AgentTrack {
            bbox,
            velocity: Vec2::new(vx, vy),
            gt_track: Some(track),
        }
    }

    #[test]
    fn kinematic_shift_is_velocity_times_time() {
        let a = agent(2.0, 0.0);
        let b = agent_box_at(&a, 1.5, PerceptionMode::Kinematic).unwrap();
        assert!((b.center_x - 13.0).abs() < 1e-12);
        assert_eq!(b.heading, a.bbox.heading);
    }

    #[test]
    fn time_zero_is_identity_in_both_modes() {
        let a = agent(2.0, 0.5);
        let k = agent_box_at(&a, 0.0, PerceptionMode::Kinematic).unwrap();
        assert_eq!(k, a.bbox);
        let g = agent_box_at(&a, 0.0, PerceptionMode::GtOracle).unwrap();
        assert_eq!(g, a.gt_track.as_ref().unwrap()[0]);
    }

    #[test]
    fn oracle_midpoint_uses_shortest_arc() {
        let a = agent(0.0, 0.0);
        let b = agent_box_at(&a, 0.25, PerceptionMode::GtOracle).unwrap();
        let track = a.gt_track.as_ref().unwrap();
        assert!((b.center_x - 0.5 * (track[0].center_x + track[1].center_x)).abs() < 1e-12);
        // headings straddle +/-pi: pi-0.1 and pi+0.1 wrapped to -pi+0.1
        let expect = normalize_angle(PI);
        assert!((angle_diff(b.heading, expect)).abs() < 1e-12);
    }

    #[test]
    fn oracle_requires_track() {
        let mut a = agent(1.0, 0.0);
        a.gt_track = None;
        assert!(matches!(
            agent_box_at(&a, 1.0, PerceptionMode::GtOracle),
            Err(Error::Config(_))
        ));
        assert!(agent_box_at(&a, 1.0, PerceptionMode::Kinematic).is_ok());
    }

    #[test]
    fn query_time_out_of_range_is_rejected() {
        let a = agent(1.0, 0.0);
        assert!(agent_box_at(&a, 4.5, PerceptionMode::Kinematic).is_err());
        assert!(agent_box_at(&a, -0.1, PerceptionMode::Kinematic).is_err());
    }

    #[test]
    fn trajectory_length_and_bounds() {
        let pts = |n: usize, x: f64| (0..n).map(|_| Pose2D::new(x, 0.0, 0.0)).collect();
        assert!(Trajectory::new(pts(7, 1.0)).is_err());
        assert!(Trajectory::new(pts(8, 1.0)).is_ok());
        assert!(Trajectory::new(pts(8, 250.0)).is_err());
        assert!(Trajectory::new(pts(8, f64::NAN)).is_err());
    }

    #[test]
    fn headings_follow_next_point() {
        let pos: Vec<Vec2> = (0..8)
            .map(|k| Vec2::new(k as f64, if k >= 4 { 1.0 } else { 0.0 }))
            .collect();
        let t = Trajectory::from_positions(&pos).unwrap();
        assert_eq!(t.points()[0].heading, 0.0);
        assert!((t.points()[3].heading - PI / 4.0).abs() < 1e-12);
        assert_eq!(t.points()[7].heading, t.points()[6].heading);
    }

    #[test]
    fn polyline_projection_arc_length() {
        let line = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)];
        let (s, d) = project_on_polyline(&line, Vec2::new(4.0, 1.0));
        assert!((s - 4.0).abs() < 1e-12 && (d - 1.0).abs() < 1e-12);
        let (s, _) = project_on_polyline(&line, Vec2::new(11.0, 5.0));
        assert!((s - 15.0).abs() < 1e-12);
    }
}
