#![allow(dead_code)]

use drivelab::geometry::{OrientedBox, Polygon, Pose2D, Vec2};
use drivelab::scenario::{AgentTrack, NavCommand, Scenario, Trajectory, TRACK_SAMPLES};

pub const GOLDEN_PROMPT: &str = include_str!("../golden/ttc_feedback_prompt.txt");

/// Straight constant-speed plan with a parked truck ahead. Only projections
/// from the seventh waypoint onward reach the truck.
pub fn ttc_feedback_case() -> (Scenario, Trajectory) {
    let truck = OrientedBox::new(34.14, -0.85, 1.59, 10.26, 2.95, 4.39, -0.02, "vehicle").unwrap();
    let xs = [3.1, 6.21, 9.31, 12.42, 15.52, 18.62, 21.73, 24.83];
    let plan = Trajectory::new(xs.iter().map(|&x| Pose2D::new(x, 0.0, 0.0)).collect()).unwrap();
    let scenario = Scenario {
        id: "ttc-golden".into(),
        ego_history: [
            Pose2D::new(-9.44, 0.02, -0.02),
            Pose2D::new(-6.21, -0.02, 0.0),
            Pose2D::new(-3.05, -0.03, 0.0),
            Pose2D::new(0.0, 0.0, 0.0),
        ],
        ego_speed: 6.2,
        agents: vec![AgentTrack {
            gt_track: Some(vec![truck.clone(); TRACK_SAMPLES]),
            velocity: Vec2::new(0.0, 0.0),
            bbox: truck,
        }],
        drivable_area: Polygon::new(vec![
            Vec2::new(-20.0, -5.25),
            Vec2::new(80.0, -5.25),
            Vec2::new(80.0, 5.25),
            Vec2::new(-20.0, 5.25),
        ])
        .unwrap(),
        centerline: (0..=16).map(|i| Vec2::new(i as f64 * 5.0 - 10.0, 0.0)).collect(),
        nav_command: NavCommand::GoStraight,
        gt_trajectory: None,
    };
    (scenario, plan)
}
