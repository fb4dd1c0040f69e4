use super::*;
use crate::geometry::{Polygon, Pose2D, Vec2};
use crate::scenario::{AgentTrack, NavCommand, Scenario, Trajectory, TRACK_SAMPLES};

fn corridor(half_width: f64) -> Polygon {
    Polygon::new(vec![
        Vec2::new(-20.0, -half_width),
        Vec2::new(90.0, -half_width),
        Vec2::new(90.0, half_width),
        Vec2::new(-20.0, half_width),
    ])
    .unwrap()
}

fn scenario_with(agents: Vec<AgentTrack>, speed: f64) -> Scenario {
    Scenario {
        id: "test".into(),
        ego_history: std::array::from_fn(|i| Pose2D::new(-((3 - i) as f64) * speed * 0.5, 0.0, 0.0)),
        ego_speed: speed,
        agents,
        drivable_area: corridor(3.5),
        centerline: (0..=18).map(|i| Vec2::new(i as f64 * 5.0, 0.0)).collect(),
        nav_command: NavCommand::GoStraight,
        gt_trajectory: Some(straight(speed * 0.5)),
    }
}

fn straight(step: f64) -> Trajectory {
    let pos: Vec<Vec2> = (1..=8).map(|k| Vec2::new(k as f64 * step, 0.0)).collect();
    Trajectory::from_positions(&pos).unwrap()
}

fn static_agent(b: OrientedBox) -> AgentTrack {
    AgentTrack {
        gt_track: Some(vec![b.clone(); TRACK_SAMPLES]),
        velocity: Vec2::new(0.0, 0.0),
        bbox: b,
    }
}

fn report(nc: bool, dac: bool, ttc: bool, comfort: bool, ep: f64) -> MetricReport {
    MetricReport {
        nc,
        dac,
        ttc,
        comfort,
        ep,
        nc_evidence: Vec::new(),
        ttc_evidence: Vec::new(),
        dac_evidence: Vec::new(),
    }
}

#[test]
fn compose_examples() {
    let w = PdmsWeights::default();
    assert_eq!(compose_pdms(&report(true, true, true, true, 1.0), &w), 1.0);
    assert_eq!(compose_pdms(&report(false, true, true, true, 1.0), &w), 0.0);
    let v = compose_pdms(&report(true, true, false, true, 1.0), &w);
    assert!((v - 7.0 / 12.0).abs() < 1e-12);
}

#[test]
fn agent_score_drops_progress() {
    let cfg = PdmConfig::default();
    let r = report(true, true, false, true, 0.0);
    assert!((agent_score_from_report(&r, &cfg) - 2.0 / 7.0).abs() < 1e-12);
    assert_eq!(
        agent_score_from_report(&report(true, false, true, true, 1.0), &cfg),
        0.0
    );
    assert_eq!(agent_score_from_report(&report(true, true, true, true, 0.0), &cfg), 1.0);
    let strict = PdmConfig {
        reward_includes_comfort: false,
        ..PdmConfig::default()
    };
    assert_eq!(
        agent_score_from_report(&report(true, true, true, false, 0.0), &strict),
        1.0
    );
}

#[test]
fn agent_score_ignores_expert() {
    let cfg = PdmConfig::default();
    let mut s = scenario_with(Vec::new(), 6.0);
    let t = straight(1.0);
    let a = agent_pdm_score(&t, &s, PerceptionMode::GtOracle, &cfg).unwrap();
    s.gt_trajectory = None;
    let b = agent_pdm_score(&t, &s, PerceptionMode::GtOracle, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stationary_agent_on_waypoint_four() {
    let cfg = PdmConfig::default();
    let traj = straight(3.0);
    let p = traj.points()[4];
    let b = OrientedBox::new(p.x, p.y, 0.8, 4.0, 1.8, 1.6, 0.0, "vehicle").unwrap();
    let s = scenario_with(vec![static_agent(b.clone())], 6.0);
    // the first waypoint reaching the box is index 3 (front at 14.3 > rear 13.0)
    let (ok, ev) = score_nc(&traj, &s, PerceptionMode::GtOracle, &cfg).unwrap();
    assert!(!ok);
    assert_eq!(ev.len(), 1);
    assert_eq!(ev[0].bbox, b);
    assert_eq!(ev[0].point_index, 3);
    assert!(boxes_overlap(
        &footprint_at(&traj.points()[ev[0].point_index], 4.6, 1.9),
        &b
    ));
    for k in 0..ev[0].point_index {
        assert!(!boxes_overlap(&footprint_at(&traj.points()[k], 4.6, 1.9), &b));
    }
}

#[test]
fn nc_passes_without_agents() {
    let cfg = PdmConfig::default();
    let s = scenario_with(Vec::new(), 6.0);
    assert_eq!(
        score_nc(&straight(3.0), &s, PerceptionMode::Kinematic, &cfg).unwrap(),
        (true, Vec::new())
    );
    assert_eq!(
        score_ttc(&straight(3.0), &s, PerceptionMode::Kinematic, &cfg).unwrap(),
        (true, Vec::new())
    );
}

#[test]
fn dac_flags_only_the_last_point() {
    let cfg = PdmConfig::default();
    let s = scenario_with(Vec::new(), 6.0);
    let mut pos: Vec<Vec2> = (1..=8).map(|k| Vec2::new(k as f64 * 3.0, 0.0)).collect();
    pos[7].y = 3.5 + 5.0;
    let traj = Trajectory::from_positions(&pos).unwrap();
    let (ok, ev) = score_dac(&traj, &s, &cfg);
    assert!(!ok);
    assert_eq!(ev.iter().map(|d| d.point_index).collect::<Vec<_>>(), vec![7]);
    assert!(score_dac(&straight(3.0), &s, &cfg).0);
}

#[test]
fn ttc_projection_reaches_static_agent() {
    let cfg = PdmConfig::default();
    // 10 m/s: every waypoint step is 5 m
    let traj = straight(5.0);
    let k = 3;
    let front = traj.points()[k].x + 2.3;
    let b = OrientedBox::new(front + 8.0 + 1.0, 0.0, 0.8, 2.0, 1.8, 1.6, 0.0, "vehicle").unwrap();
    let s = scenario_with(vec![static_agent(b)], 10.0);
    let (ok, ev) = score_ttc(&traj, &s, PerceptionMode::GtOracle, &cfg).unwrap();
    assert!(!ok);
    assert_eq!(ev[0].point_index, k);
}

#[test]
fn ttc_rejects_bad_parameters() {
    let s = scenario_with(Vec::new(), 6.0);
    for (h, dt) in [(0.0, 0.1), (1.0, 0.0), (-1.0, 0.1)] {
        let cfg = PdmConfig {
            ttc_horizon: h,
            ttc_dt: dt,
            ..PdmConfig::default()
        };
        assert!(matches!(
            score_ttc(&straight(3.0), &s, PerceptionMode::Kinematic, &cfg),
            Err(Error::Config(_))
        ));
    }
}

#[test]
fn comfort_cases() {
    let bounds = ComfortBounds::default();
    let s = scenario_with(Vec::new(), 6.0);
    assert!(score_comfort(&straight(3.0), &s.ego_history, &bounds));
    let still = scenario_with(Vec::new(), 0.0);
    assert!(!score_comfort(&straight(10.0), &still.ego_history, &bounds));
}

#[test]
fn comfort_bound_is_inclusive() {
    // constant deceleration of exactly the longitudinal bound from 6 m/s
    let history = scenario_with(Vec::new(), 6.0).ego_history;
    let a = 4.0;
    let mut x = 0.0;
    let mut v = 6.0f64;
    let pos: Vec<Vec2> = (0..8)
        .map(|_| {
            v = (v - a * 0.5).max(0.0);
            x += v * 0.5;
            Vec2::new(x, 0.0)
        })
        .collect();
    let traj = Trajectory::from_positions(&pos).unwrap();
    let profile = motion_profile(&traj, &history);
    let peak = profile.lon_accel.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let jerk = profile.jerk.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let at_bound = ComfortBounds {
        max_lon_accel: peak,
        max_jerk: jerk,
        ..ComfortBounds::default()
    };
    assert!(score_comfort(&traj, &history, &at_bound));
    let below = ComfortBounds {
        max_lon_accel: peak - 1e-9,
        ..at_bound
    };
    assert!(!score_comfort(&traj, &history, &below));
}

#[test]
fn progress_ratios() {
    let s = scenario_with(Vec::new(), 6.0);
    assert!((score_ep(&straight(3.0), &s) - 1.0).abs() < 1e-12);
    assert!((score_ep(&straight(1.5), &s) - 0.5).abs() < 1e-12);
    let parked: Vec<Vec2> = vec![Vec2::new(0.0, 0.0); 8];
    assert_eq!(score_ep(&Trajectory::from_positions(&parked).unwrap(), &s), 0.0);
    let mut no_expert = s.clone();
    no_expert.gt_trajectory = None;
    assert!((score_ep(&straight(3.0), &no_expert) - 1.0).abs() < 1e-12);
    let stopped = scenario_with(Vec::new(), 0.0);
    assert_eq!(score_ep(&Trajectory::from_positions(&parked).unwrap(), &stopped), 1.0);
}

#[test]
fn feedback_empty_iff_clean() {
    let cfg = PdmConfig::default();
    let s = scenario_with(Vec::new(), 6.0);
    let r = evaluate(&straight(3.0), &s, PerceptionMode::GtOracle, &cfg).unwrap();
    let fb = extract_feedback(&r);
    assert!(fb.is_empty() && fb.text().is_empty());
    let mut pos: Vec<Vec2> = (1..=8).map(|k| Vec2::new(k as f64 * 3.0, 0.0)).collect();
    pos[7].y = 9.0;
    let r = evaluate(
        &Trajectory::from_positions(&pos).unwrap(),
        &s,
        PerceptionMode::GtOracle,
        &cfg,
    )
    .unwrap();
    let fb = extract_feedback(&r);
    assert!(!fb.is_empty());
    assert_eq!(fb.text(), extract_feedback(&r).text());
    assert!(fb.text().contains("DAC metric"));
}

#[test]
fn coordinate_formatting() {
    assert_eq!(format_coord(3.1), "3.1");
    assert_eq!(format_coord(0.0), "0.0");
    assert_eq!(format_coord(-0.004), "0.0");
    assert_eq!(format_coord(-0.85), "-0.85");
    assert_eq!(format_coord(10.256), "10.26");
    assert_eq!(format_coord(4.0), "4.0");
    assert_eq!(format_signed(21.73), "+21.73");
    assert_eq!(format_signed(-2.5), "-2.5");
    assert_eq!(format_signed(0.0), "0.0");
}

#[test]
fn feedback_roundtrips_through_json() {
    let cfg = PdmConfig::default();
    let traj = straight(3.0);
    let p = traj.points()[4];
    let b = OrientedBox::new(p.x, p.y, 0.8, 4.0, 1.8, 1.6, 0.1, "vehicle").unwrap();
    let s = scenario_with(vec![static_agent(b)], 6.0);
    let fb = extract_feedback(&evaluate(&traj, &s, PerceptionMode::GtOracle, &cfg).unwrap());
    let json = serde_json::to_string(&fb).unwrap();
    let back: Feedback = serde_json::from_str(&json).unwrap();
    assert_eq!(back, fb);
}
