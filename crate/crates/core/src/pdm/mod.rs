//! Trajectory scoring: no-collision, drivable-area compliance, time-to-collision,
//! comfort and ego progress, composed into a single score, plus structured
//! feedback for whatever failed.
//!
//! The composite follows the usual penalties-times-weighted-average form:
//!
//! ```text
//! pdms = nc * dac * (w_ep * ep + w_ttc * ttc + w_c * comfort) / (w_ep + w_ttc + w_c)
//! ```
//!
//! Training rewards use [`agent_pdm_score`], which drops progress because it
//! needs the expert trajectory.

pub(crate) mod feedback;

pub use feedback::{format_coord, format_signed, Feedback};

use std::ops::Sub;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff, box_in_polygon, boxes_overlap, footprint_at, OrientedBox, Pose2D, Vec2};
use crate::scenario::{
    agent_box_at, PerceptionMode, Scenario, Trajectory, DEFAULT_EGO_LENGTH, DEFAULT_EGO_WIDTH, HORIZON_S, STEP_DT,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdmsWeights {
    pub ep: f64,
    pub ttc: f64,
    pub comfort: f64,
}

impl Default for PdmsWeights {
    fn default() -> Self {
        Self {
            ep: 5.0,
            ttc: 5.0,
            comfort: 2.0,
        }
    }
}

impl PdmsWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.ep, self.ttc, self.comfort];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config(format!("invalid PDMS weights {self:?}")));
        }
        Ok(())
    }
}

/// Closed-interval limits on finite-difference motion quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortBounds {
    pub max_lon_accel: f64,
    pub max_lat_accel: f64,
    pub max_jerk: f64,
    pub max_yaw_rate: f64,
    pub max_yaw_accel: f64,
}

impl Default for ComfortBounds {
    fn default() -> Self {
        Self {
            max_lon_accel: 4.89,
            max_lat_accel: 4.89,
            max_jerk: 8.37,
            max_yaw_rate: 0.95,
            max_yaw_accel: 1.93,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdmConfig {
    pub ego_length: f64,
    pub ego_width: f64,
    pub ttc_horizon: f64,
    pub ttc_dt: f64,
    pub comfort: ComfortBounds,
    pub weights: PdmsWeights,
    /// When false the reward-time score is `nc * dac * ttc`.
    pub reward_includes_comfort: bool,
}

impl Default for PdmConfig {
    fn default() -> Self {
        Self {
            ego_length: DEFAULT_EGO_LENGTH,
            ego_width: DEFAULT_EGO_WIDTH,
            ttc_horizon: 1.0,
            ttc_dt: 0.1,
            comfort: ComfortBounds::default(),
            weights: PdmsWeights::default(),
            reward_includes_comfort: true,
        }
    }
}

impl PdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ego_length > 0.0 && self.ego_width > 0.0) {
            return Err(Error::config("ego footprint must be positive"));
        }
        if !(self.ttc_horizon > 0.0) || !(self.ttc_dt > 0.0) {
            return Err(Error::config(format!(
                "TTC horizon and step must be positive, got {} / {}",
                self.ttc_horizon, self.ttc_dt
            )));
        }
        self.weights.validate()
    }

    fn footprint(&self, pose: &Pose2D) -> OrientedBox {
        footprint_at(pose, self.ego_length, self.ego_width)
    }
}

/// A waypoint in conflict with an agent box.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub point_index: usize,
    pub point: Pose2D,
    pub bbox: OrientedBox,
}

/// A waypoint whose footprint leaves the drivable area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DacViolation {
    pub point_index: usize,
    pub point: Pose2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub nc: bool,
    pub dac: bool,
    pub ttc: bool,
    pub comfort: bool,
    pub ep: f64,
    pub nc_evidence: Vec<Violation>,
    pub ttc_evidence: Vec<Violation>,
    pub dac_evidence: Vec<DacViolation>,
}

fn as_score(pass: bool) -> f64 {
    if pass {
        1.0
    } else {
        0.0
    }
}

impl MetricReport {
    pub fn nc_score(&self) -> f64 {
        as_score(self.nc)
    }
    pub fn dac_score(&self) -> f64 {
        as_score(self.dac)
    }
    pub fn ttc_score(&self) -> f64 {
        as_score(self.ttc)
    }
    pub fn comfort_score(&self) -> f64 {
        as_score(self.comfort)
    }

    /// True when the agent metric set {NC, DAC, TTC} all pass.
    pub fn is_clean(&self) -> bool {
        self.nc && self.dac && self.ttc
    }
}

fn sort_evidence(ev: &mut [(usize, Violation)]) {
    ev.sort_by_key(|(agent, v)| (v.point_index, *agent));
}

/// No-collision check: the first colliding waypoint per agent.
pub fn score_nc(
    traj: &Trajectory,
    scenario: &Scenario,
    mode: PerceptionMode,
    cfg: &PdmConfig,
) -> Result<(bool, Vec<Violation>)> {
    let footprints: Vec<OrientedBox> = traj.points().iter().map(|p| cfg.footprint(p)).collect();
    let mut evidence = Vec::new();
    for (ai, agent) in scenario.agents.iter().enumerate() {
        for (k, ego) in footprints.iter().enumerate() {
            let other = agent_box_at(agent, Trajectory::time_of(k), mode)?;
            if boxes_overlap(ego, &other) {
                evidence.push((
                    ai,
                    Violation {
                        point_index: k,
                        point: traj.points()[k],
                        bbox: other,
                    },
                ));
                break;
            }
        }
    }
    sort_evidence(&mut evidence);
    let evidence: Vec<Violation> = evidence.into_iter().map(|(_, v)| v).collect();
    Ok((evidence.is_empty(), evidence))
}

/// Whether the ego footprint at `pose` lies inside the drivable area.
pub fn pose_in_drivable_area(pose: &Pose2D, scenario: &Scenario, cfg: &PdmConfig) -> bool {
    box_in_polygon(&cfg.footprint(pose), &scenario.drivable_area)
}

/// Whether the ego footprint at `pose` overlaps `other`.
pub fn pose_collides(pose: &Pose2D, other: &OrientedBox, cfg: &PdmConfig) -> bool {
    boxes_overlap(&cfg.footprint(pose), other)
}

/// Whether the ego, pushed forward from `pose` at `speed` in `ttc_dt` steps
/// up to `ttc_horizon`, overlaps the stationary box `other`.
pub fn pose_time_to_collision_conflict(pose: &Pose2D, speed: f64, other: &OrientedBox, cfg: &PdmConfig) -> bool {
    let n_proj = ((cfg.ttc_horizon / cfg.ttc_dt) + 1e-9).floor() as usize;
    let (c, s) = (pose.heading.cos(), pose.heading.sin());
    (1..=n_proj).any(|step| {
        let dist = speed * step as f64 * cfg.ttc_dt;
        let projected = Pose2D {
            x: pose.x + dist * c,
            y: pose.y + dist * s,
            heading: pose.heading,
        };
        boxes_overlap(&cfg.footprint(&projected), other)
    })
}

/// Drivable-area compliance: every waypoint footprint must lie inside.
pub fn score_dac(traj: &Trajectory, scenario: &Scenario, cfg: &PdmConfig) -> (bool, Vec<DacViolation>) {
    let evidence: Vec<DacViolation> = traj
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| !pose_in_drivable_area(p, scenario, cfg))
        .map(|(k, p)| DacViolation {
            point_index: k,
            point: *p,
        })
        .collect();
    (evidence.is_empty(), evidence)
}

/// Speed at each waypoint from the backward difference to the previous
/// waypoint (the origin precedes waypoint 0).
pub fn waypoint_speeds(traj: &Trajectory) -> [f64; crate::scenario::HORIZON_STEPS] {
    let mut prev = Vec2::new(0.0, 0.0);
    let mut speeds = [0.0; crate::scenario::HORIZON_STEPS];
    for (k, p) in traj.points().iter().enumerate() {
        speeds[k] = p.position().sub(prev).norm() / STEP_DT;
        prev = p.position();
    }
    speeds
}

/// Time-to-collision: from each waypoint the ego is pushed forward along its
/// heading at its local speed in `dt` steps up to `horizon`; any overlap with
/// an agent box at the projected time is a violation. Times past the
/// planning horizon read the last available agent state.
pub fn score_ttc(
    traj: &Trajectory,
    scenario: &Scenario,
    mode: PerceptionMode,
    cfg: &PdmConfig,
) -> Result<(bool, Vec<Violation>)> {
    if !(cfg.ttc_horizon > 0.0) || !(cfg.ttc_dt > 0.0) {
        return Err(Error::config(format!(
            "TTC horizon and step must be positive, got {} / {}",
            cfg.ttc_horizon, cfg.ttc_dt
        )));
    }
    let n_proj = ((cfg.ttc_horizon / cfg.ttc_dt) + 1e-9).floor() as usize;
    let speeds = waypoint_speeds(traj);
    let mut evidence = Vec::new();
    for (ai, agent) in scenario.agents.iter().enumerate() {
        'waypoints: for (k, p) in traj.points().iter().enumerate() {
            let (c, s) = (p.heading.cos(), p.heading.sin());
            for step in 1..=n_proj {
                let ds = step as f64 * cfg.ttc_dt;
                let dist = speeds[k] * ds;
                let projected = Pose2D {
                    x: p.x + dist * c,
                    y: p.y + dist * s,
                    heading: p.heading,
                };
                let t = (Trajectory::time_of(k) + ds).min(HORIZON_S);
                let other = agent_box_at(agent, t, mode)?;
                if boxes_overlap(&cfg.footprint(&projected), &other) {
                    evidence.push((
                        ai,
                        Violation {
                            point_index: k,
                            point: *p,
                            bbox: other,
                        },
                    ));
                    break 'waypoints;
                }
            }
        }
    }
    sort_evidence(&mut evidence);
    let evidence: Vec<Violation> = evidence.into_iter().map(|(_, v)| v).collect();
    Ok((evidence.is_empty(), evidence))
}

/// Finite-difference motion profile of the full history followed by the plan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MotionProfile {
    pub lon_accel: Vec<f64>,
    pub lat_accel: Vec<f64>,
    pub jerk: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub yaw_accel: Vec<f64>,
}

impl MotionProfile {
    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn within(&self, b: &ComfortBounds) -> bool {
        Self::max_abs(&self.lon_accel) <= b.max_lon_accel
            && Self::max_abs(&self.lat_accel) <= b.max_lat_accel
            && Self::max_abs(&self.jerk) <= b.max_jerk
            && Self::max_abs(&self.yaw_rate) <= b.max_yaw_rate
            && Self::max_abs(&self.yaw_accel) <= b.max_yaw_accel
    }
}

pub fn motion_profile(traj: &Trajectory, ego_history: &[Pose2D]) -> MotionProfile {
    let poses: Vec<Pose2D> = ego_history.iter().chain(traj.points().iter()).copied().collect();
    let vel: Vec<Vec2> = poses
        .windows(2)
        .map(|w| w[1].position().sub(w[0].position()).scale(1.0 / STEP_DT))
        .collect();
    let acc: Vec<Vec2> = vel.windows(2).map(|w| w[1].sub(w[0]).scale(1.0 / STEP_DT)).collect();
    let mut profile = MotionProfile::default();
    for (i, a) in acc.iter().enumerate() {
        // acceleration i sits at pose i + 1
        let h = poses[i + 1].heading;
        let u = Vec2::new(h.cos(), h.sin());
        let n = Vec2::new(-h.sin(), h.cos());
        profile.lon_accel.push(a.dot(u));
        profile.lat_accel.push(a.dot(n));
    }
    profile.jerk = acc.windows(2).map(|w| w[1].sub(w[0]).norm() / STEP_DT).collect();
    profile.yaw_rate = poses
        .windows(2)
        .map(|w| angle_diff(w[1].heading, w[0].heading) / STEP_DT)
        .collect();
    profile.yaw_accel = profile.yaw_rate.windows(2).map(|w| (w[1] - w[0]) / STEP_DT).collect();
    profile
}

/// Comfort over the history-prefixed trajectory; every bound is inclusive.
pub fn score_comfort(traj: &Trajectory, ego_history: &[Pose2D], bounds: &ComfortBounds) -> bool {
    motion_profile(traj, ego_history).within(bounds)
}

/// Route progress of the trajectory endpoint relative to the expert's, in [0, 1].
/// Without an expert the reference is `ego_speed * 4 s`; references shorter
/// than half a meter count as fully achieved.
pub fn score_ep(traj: &Trajectory, scenario: &Scenario) -> f64 {
    let reference = match &scenario.gt_trajectory {
        Some(gt) => scenario.progress_along_centerline(gt.endpoint().position()),
        None => scenario.ego_speed * HORIZON_S,
    };
    if reference < 0.5 {
        return 1.0;
    }
    let achieved = scenario.progress_along_centerline(traj.endpoint().position());
    (achieved / reference).clamp(0.0, 1.0)
}

/// Full metric report including progress.
pub fn evaluate(traj: &Trajectory, scenario: &Scenario, mode: PerceptionMode, cfg: &PdmConfig) -> Result<MetricReport> {
    let (nc, nc_evidence) = score_nc(traj, scenario, mode, cfg)?;
    let (dac, dac_evidence) = score_dac(traj, scenario, cfg);
    let (ttc, ttc_evidence) = score_ttc(traj, scenario, mode, cfg)?;
    let comfort = score_comfort(traj, &scenario.ego_history, &cfg.comfort);
    Ok(MetricReport {
        nc,
        dac,
        ttc,
        comfort,
        ep: score_ep(traj, scenario),
        nc_evidence,
        ttc_evidence,
        dac_evidence,
    })
}

/// Penalties times weighted average over {EP, TTC, comfort}.
pub fn compose_pdms(report: &MetricReport, w: &PdmsWeights) -> f64 {
    let penalties = report.nc_score() * report.dac_score();
    let weighted = w.ep * report.ep + w.ttc * report.ttc_score() + w.comfort * report.comfort_score();
    penalties * weighted / (w.ep + w.ttc + w.comfort)
}

/// Reward-time score from an existing report; never reads progress.
pub fn agent_score_from_report(report: &MetricReport, cfg: &PdmConfig) -> f64 {
    let penalties = report.nc_score() * report.dac_score();
    if cfg.reward_includes_comfort {
        let w = &cfg.weights;
        penalties * (w.ttc * report.ttc_score() + w.comfort * report.comfort_score()) / (w.ttc + w.comfort)
    } else {
        penalties * report.ttc_score()
    }
}

/// Reward-time score: the composite without ego progress.
pub fn agent_pdm_score(traj: &Trajectory, scenario: &Scenario, mode: PerceptionMode, cfg: &PdmConfig) -> Result<f64> {
    let (nc, _) = score_nc(traj, scenario, mode, cfg)?;
    let (dac, _) = score_dac(traj, scenario, cfg);
    let (ttc, _) = score_ttc(traj, scenario, mode, cfg)?;
    let comfort = score_comfort(traj, &scenario.ego_history, &cfg.comfort);
    let report = MetricReport {
        nc,
        dac,
        ttc,
        comfort,
        ep: 0.0,
        nc_evidence: Vec::new(),
        ttc_evidence: Vec::new(),
        dac_evidence: Vec::new(),
    };
    Ok(agent_score_from_report(&report, cfg))
}

/// Structured feedback for every failed agent metric.
pub fn extract_feedback(report: &MetricReport) -> Feedback {
    Feedback {
        nc: report.nc_evidence.clone(),
        dac: report.dac_evidence.clone(),
        ttc: report.ttc_evidence.clone(),
        format_error: false,
    }
}

#[cfg(test)]
mod tests;
