//! Procedural scenario families.
//!
//! Each family draws its parameters from a per-scenario ChaCha stream keyed by
//! `(seed, index, attempt)`, plans a scripted expert, and keeps the draw only
//! if the expert is fully clean under ground-truth perception. Conflict
//! families additionally require that naive constant-velocity driving is not.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::expert::{ExpertPlanner, Fallback};
use super::{
    AgentTrack, NavCommand, Scenario, Trajectory, DEFAULT_EGO_LENGTH, DEFAULT_EGO_WIDTH, HISTORY_LEN, HORIZON_STEPS,
    STEP_DT, TRACK_SAMPLES,
};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, OrientedBox, Polygon, Pose2D, Vec2};
use crate::pdm::{self, PdmConfig};
use crate::rng::mix_seed;

const MAX_ATTEMPTS: u64 = 400;
const CORRIDOR_BACK: f64 = -20.0;
const CORRIDOR_FRONT: f64 = 90.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    StraightCorridor,
    LaneNarrowing,
    LeadVehicleBrake,
    CrosswalkPedestrian,
    IntersectionQueue,
    RearApproach,
}

pub const ALL_FAMILIES: [Family; 6] = [
    Family::StraightCorridor,
    Family::LaneNarrowing,
    Family::LeadVehicleBrake,
    Family::CrosswalkPedestrian,
    Family::IntersectionQueue,
    Family::RearApproach,
];

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::StraightCorridor => "straight_corridor",
            Family::LaneNarrowing => "lane_narrowing",
            Family::LeadVehicleBrake => "lead_vehicle_brake",
            Family::CrosswalkPedestrian => "crosswalk_pedestrian",
            Family::IntersectionQueue => "intersection_queue",
            Family::RearApproach => "rear_approach",
        }
    }

    /// Families whose constant-velocity extrapolation must violate a metric.
    fn requires_conflict(self) -> bool {
        !matches!(self, Family::StraightCorridor)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_FAMILIES.iter().copied().find(|f| f.name() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown scenario family `{s}` (expected one of: {})",
                ALL_FAMILIES.map(|f| f.name()).join(", ")
            ))
        })
    }
}

/// Generates `count` scenarios cycling through `catalog` (all families when
/// empty). Deterministic in `(seed, count, catalog)`.
pub fn generate_scenarios<S: AsRef<str>>(seed: u64, count: usize, catalog: &[S]) -> Result<Vec<Scenario>> {
    if count == 0 {
        return Err(Error::config("scenario count must be positive"));
    }
    let families: Vec<Family> = if catalog.is_empty() {
        ALL_FAMILIES.to_vec()
    } else {
        catalog.iter().map(|s| s.as_ref().parse()).collect::<Result<_>>()?
    };
    (0..count)
        .map(|i| generate_one(seed, i, families[i % families.len()]))
        .collect()
}

struct Draft {
    v0: f64,
    v_cap: f64,
    lateral: [f64; HORIZON_STEPS],
    fallback: Fallback,
    agents: Vec<AgentTrack>,
    drivable: Polygon,
    centerline: Vec<Vec2>,
    nav: NavCommand,
}

fn generate_one(seed: u64, index: usize, family: Family) -> Result<Scenario> {
    let cfg = PdmConfig::default();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, index as u64, attempt]));
        let draft = match family {
            Family::StraightCorridor => straight_corridor(&mut rng),
            Family::LaneNarrowing => lane_narrowing(&mut rng),
            Family::LeadVehicleBrake => lead_vehicle_brake(&mut rng),
            Family::CrosswalkPedestrian => crosswalk_pedestrian(&mut rng),
            Family::IntersectionQueue => intersection_queue(&mut rng),
            Family::RearApproach => rear_approach(&mut rng),
        };
        let planner = ExpertPlanner {
            agents: &draft.agents,
            ego_length: DEFAULT_EGO_LENGTH,
            ego_width: DEFAULT_EGO_WIDTH,
        };
        let positions = planner.plan(draft.v0, draft.v_cap, &draft.lateral, draft.fallback);
        let expert = Trajectory::from_positions(&positions)?;
        let history = std::array::from_fn(|i| {
            let back = (HISTORY_LEN - 1 - i) as f64 * STEP_DT * draft.v0;
            Pose2D::new(-back, 0.0, 0.0)
        });
        let scenario = Scenario {
            id: format!("{}-{seed}-{index:04}", family.name()),
            ego_history: history,
            ego_speed: draft.v0,
            agents: draft.agents,
            drivable_area: draft.drivable,
            centerline: draft.centerline,
            nav_command: draft.nav,
            gt_trajectory: Some(expert),
        };
        if scenario.validate().is_err() {
            continue;
        }
        let expert = scenario.gt_trajectory.as_ref().expect("just set");
        let report = pdm::evaluate(expert, &scenario, super::PerceptionMode::GtOracle, &cfg)?;
        if !(report.is_clean() && report.comfort) {
            continue;
        }
        if family.requires_conflict() {
            let naive = scenario.constant_velocity_extrapolation()?;
            let naive_report = pdm::evaluate(&naive, &scenario, super::PerceptionMode::GtOracle, &cfg)?;
            if naive_report.is_clean() {
                continue;
            }
        }
        return Ok(scenario);
    }
    Err(Error::data(format!(
        "could not generate a valid {family} scenario for seed {seed} index {index}"
    )))
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, options: &[T]) -> T {
    options[rng.gen_range(0..options.len())]
}

fn corridor(left: f64, right: f64) -> Polygon {
    Polygon::new(vec![
        Vec2::new(CORRIDOR_BACK, -right),
        Vec2::new(CORRIDOR_FRONT, -right),
        Vec2::new(CORRIDOR_FRONT, left),
        Vec2::new(CORRIDOR_BACK, left),
    ])
    .expect("corridor rectangle is valid")
}

fn straight_centerline() -> Vec<Vec2> {
    (0..=18).map(|i| Vec2::new(i as f64 * 5.0, 0.0)).collect()
}

/// Samples a track from a motion function `t -> (x, y, heading)`.
fn track_from(template: &OrientedBox, velocity: Vec2, motion: impl Fn(f64) -> (f64, f64, f64)) -> AgentTrack {
    let gt: Vec<OrientedBox> = (0..TRACK_SAMPLES)
        .map(|i| {
            let (x, y, h) = motion(i as f64 * STEP_DT);
            let mut b = template.with_center(x, y);
            b.heading = normalize_angle(h);
            b
        })
        .collect();
    let (x0, y0, h0) = motion(0.0);
    let mut bbox = template.with_center(x0, y0);
    bbox.heading = normalize_angle(h0);
    AgentTrack {
        bbox,
        velocity,
        gt_track: Some(gt),
    }
}

fn vehicle_template(rng: &mut ChaCha8Rng) -> OrientedBox {
    let truck = rng.gen_bool(0.15);
    let (l, w, h) = if truck {
        (
            rng.gen_range(8.0..11.0),
            rng.gen_range(2.4..3.0),
            rng.gen_range(3.0..4.2),
        )
    } else {
        (
            rng.gen_range(4.2..5.2),
            rng.gen_range(1.8..2.1),
            rng.gen_range(1.4..1.8),
        )
    };
    OrientedBox::new(0.0, 0.0, h / 2.0, l, w, h, 0.0, "vehicle").expect("positive extents")
}

fn oncoming_traffic(rng: &mut ChaCha8Rng, left: f64, agents: &mut Vec<AgentTrack>) {
    let n = rng.gen_range(0..=2);
    for _ in 0..n {
        let template = vehicle_template(rng);
        let y = left + 0.4 + template.width / 2.0 + rng.gen_range(0.3..1.2);
        let x0 = rng.gen_range(10.0..75.0);
        let speed = rng.gen_range(6.0..11.0);
        agents.push(track_from(&template, Vec2::new(-speed, 0.0), move |t| {
            (x0 - speed * t, y, std::f64::consts::PI)
        }));
    }
}

fn base_widths(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.gen_range(3.0..3.75), rng.gen_range(3.0..3.75))
}

fn straight_corridor(rng: &mut ChaCha8Rng) -> Draft {
    let v0 = pick(rng, &[4.5, 6.0, 7.5, 9.0, 10.5]);
    let (left, right) = base_widths(rng);
    let mut agents = Vec::new();
    if rng.gen_bool(0.5) {
        let template = vehicle_template(rng);
        let gap = rng.gen_range((2.0 * v0 + 8.0)..(2.0 * v0 + 25.0));
        let x0 = DEFAULT_EGO_LENGTH / 2.0 + gap + template.length / 2.0;
        let u = v0 + pick(rng, &[-1.5, 0.0, 0.0, 1.5]);
        agents.push(track_from(&template, Vec2::new(u, 0.0), move |t| {
            (x0 + u * t, 0.0, 0.0)
        }));
    }
    oncoming_traffic(rng, left, &mut agents);
    Draft {
        v0,
        v_cap: v0,
        lateral: [0.0; HORIZON_STEPS],
        fallback: Fallback::Brake,
        agents,
        drivable: corridor(left, right),
        centerline: straight_centerline(),
        nav: NavCommand::GoStraight,
    }
}

fn lane_narrowing(rng: &mut ChaCha8Rng) -> Draft {
    let v0 = pick(rng, &[4.5, 6.0, 7.5, 9.0]);
    let (left, right) = base_widths(rng);
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let taper_start = rng.gen_range(20.0..30.0);
    let taper_len = rng.gen_range(4.0..8.0);
    let closed_edge = rng.gen_range(0.1..0.4);
    let shift = -side * 1.5;
    // lateral offsets move on the second and third segments so headings change smoothly
    let mut lateral = [shift; HORIZON_STEPS];
    lateral[0] = 0.0;
    lateral[1] = shift / 2.0;
    let drivable = if side > 0.0 {
        Polygon::new(vec![
            Vec2::new(CORRIDOR_BACK, -right),
            Vec2::new(CORRIDOR_FRONT, -right),
            Vec2::new(CORRIDOR_FRONT, closed_edge),
            Vec2::new(taper_start + taper_len, closed_edge),
            Vec2::new(taper_start, left),
            Vec2::new(CORRIDOR_BACK, left),
        ])
    } else {
        Polygon::new(vec![
            Vec2::new(CORRIDOR_BACK, -right),
            Vec2::new(taper_start, -right),
            Vec2::new(taper_start + taper_len, -closed_edge),
            Vec2::new(CORRIDOR_FRONT, -closed_edge),
            Vec2::new(CORRIDOR_FRONT, left),
            Vec2::new(CORRIDOR_BACK, left),
        ])
    }
    .expect("tapered corridor is simple");
    let centerline = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(taper_start - 8.0, 0.0),
        Vec2::new(taper_start, shift),
        Vec2::new(CORRIDOR_FRONT, shift),
    ];
    let mut agents = Vec::new();
    let cone = OrientedBox::new(0.0, 0.0, 0.35, 0.5, 0.5, 0.7, 0.0, "traffic_cone").expect("valid");
    for i in 0..3 {
        let x = taper_start + taper_len + 2.0 + 6.0 * i as f64;
        let y = side * 1.2;
        agents.push(track_from(&cone, Vec2::new(0.0, 0.0), move |_| (x, y, 0.0)));
    }
    Draft {
        v0,
        v_cap: v0,
        lateral,
        fallback: Fallback::Brake,
        agents,
        drivable,
        centerline,
        nav: NavCommand::GoStraight,
    }
}

fn lead_vehicle_brake(rng: &mut ChaCha8Rng) -> Draft {
    let v0 = pick(rng, &[6.0, 7.5, 9.0, 10.5]);
    let (left, right) = base_widths(rng);
    let template = vehicle_template(rng);
    let gap = rng.gen_range((1.2 * v0 + 4.0)..(2.0 * v0 + 8.0));
    let x0 = DEFAULT_EGO_LENGTH / 2.0 + gap + template.length / 2.0;
    let t_brake = rng.gen_range(0.0..1.0);
    let decel = rng.gen_range(2.5..4.5);
    let u0 = v0;
    let motion = move |t: f64| {
        if t <= t_brake {
            return (x0 + u0 * t, 0.0, 0.0);
        }
        let tau = (t - t_brake).min(u0 / decel);
        (x0 + u0 * t_brake + u0 * tau - 0.5 * decel * tau * tau, 0.0, 0.0)
    };
    let mut agents = vec![track_from(&template, Vec2::new(u0, 0.0), motion)];
    oncoming_traffic(rng, left, &mut agents);
    Draft {
        v0,
        v_cap: v0,
        lateral: [0.0; HORIZON_STEPS],
        fallback: Fallback::Brake,
        agents,
        drivable: corridor(left, right),
        centerline: straight_centerline(),
        nav: NavCommand::GoStraight,
    }
}

fn crosswalk_pedestrian(rng: &mut ChaCha8Rng) -> Draft {
    let v0 = pick(rng, &[6.0, 7.5, 9.0]);
    let (left, right) = base_widths(rng);
    let stop_dist = v0 * v0 / 6.0;
    let x_c = rng.gen_range((stop_dist + 9.0)..(stop_dist + 16.0));
    let arrival = (x_c - DEFAULT_EGO_LENGTH / 2.0) / v0;
    let ped = OrientedBox::new(0.0, 0.0, 0.875, 0.6, 0.6, 1.75, 0.0, "pedestrian").expect("valid");
    let mut agents = Vec::new();
    let n_ped = if rng.gen_bool(0.3) { 2 } else { 1 };
    for i in 0..n_ped {
        let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let speed = rng.gen_range(1.0..1.6);
        let t_center = if i == 0 {
            (arrival + rng.gen_range(-0.5..0.5)).clamp(0.5, 3.5)
        } else {
            rng.gen_range(0.5..3.5)
        };
        let x = x_c + rng.gen_range(-1.0..1.0);
        agents.push(track_from(&ped, Vec2::new(0.0, dir * speed), move |t| {
            (x, dir * speed * (t - t_center), dir * FRAC_PI_2)
        }));
    }
    oncoming_traffic(rng, left, &mut agents);
    Draft {
        v0,
        v_cap: v0,
        lateral: [0.0; HORIZON_STEPS],
        fallback: Fallback::Brake,
        agents,
        drivable: corridor(left, right),
        centerline: straight_centerline(),
        nav: NavCommand::GoStraight,
    }
}

fn intersection_queue(rng: &mut ChaCha8Rng) -> Draft {
    let v0 = pick(rng, &[4.5, 6.0, 7.5, 9.0]);
    let (left, right) = base_widths(rng);
    let stop_dist = v0 * v0 / 6.0;
    let mut rear = rng.gen_range((stop_dist + 8.0)..(stop_dist + 20.0));
    let t_go = rng.gen_range(1.5..3.5);
    let accel = rng.gen_range(1.0..1.5);
    let n = rng.gen_range(1..=3);
    let mut agents = Vec::new();
    for _ in 0..n {
        let template = vehicle_template(rng);
        let x0 = rear + template.length / 2.0;
        let y = rng.gen_range(-0.2..0.2);
        agents.push(track_from(&template, Vec2::new(0.0, 0.0), move |t| {
            let dt = (t - t_go).max(0.0);
            (x0 + 0.5 * accel * dt * dt, y, 0.0)
        }));
        rear = x0 + template.length / 2.0 + rng.gen_range(1.5..3.0);
    }
    oncoming_traffic(rng, left, &mut agents);
    let nav = pick(
        rng,
        &[NavCommand::GoStraight, NavCommand::TurnLeft, NavCommand::TurnRight],
    );
    Draft {
        v0,
        v_cap: v0,
        lateral: [0.0; HORIZON_STEPS],
        fallback: Fallback::Brake,
        agents,
        drivable: corridor(left, right),
        centerline: straight_centerline(),
        nav,
    }
}

fn rear_approach(rng: &mut ChaCha8Rng) -> Draft {
    let v0: f64 = pick(rng, &[4.5, 6.0, 7.5]);
    let (left, right) = base_widths(rng);
    let template = vehicle_template(rng);
    let u = (v0 + pick(rng, &[3.0, 4.5])).min(12.0);
    let gap = rng.gen_range(6.0..12.0);
    let x0 = -(DEFAULT_EGO_LENGTH / 2.0 + gap + template.length / 2.0);
    let mut agents = vec![track_from(&template, Vec2::new(u, 0.0), move |t| {
        (x0 + u * t, 0.0, 0.0)
    })];
    oncoming_traffic(rng, left, &mut agents);
    Draft {
        v0,
        v_cap: (u + 1.5).min(12.0),
        lateral: [0.0; HORIZON_STEPS],
        fallback: Fallback::Accelerate,
        agents,
        drivable: corridor(left, right),
        centerline: straight_centerline(),
        nav: NavCommand::GoStraight,
    }
}

impl Scenario {
    /// Straight-line extrapolation of the last history step.
    pub fn constant_velocity_extrapolation(&self) -> Result<Trajectory> {
        let last = self.ego_history[HISTORY_LEN - 1].position();
        let prev = self.ego_history[HISTORY_LEN - 2].position();
        let step = last.sub(prev);
        let positions: Vec<Vec2> = (1..=HORIZON_STEPS).map(|k| last.add(step.scale(k as f64))).collect();
        Trajectory::from_positions(&positions)
    }
}
