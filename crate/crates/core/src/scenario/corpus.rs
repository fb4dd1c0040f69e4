//! JSON-lines corpus: one scenario per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentTrack, NavCommand, Scenario, Trajectory, HISTORY_LEN};
use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Polygon, Pose2D, Vec2};

#[derive(Serialize, Deserialize)]
struct ScenarioRecord {
    id: String,
    ego_history: Vec<[f64; 3]>,
    ego_speed: f64,
    agents: Vec<AgentRecord>,
    drivable_area: Vec<[f64; 2]>,
    centerline: Vec<[f64; 2]>,
    nav: NavCommand,
    gt_trajectory: Option<Vec<[f64; 3]>>,
}

#[derive(Serialize, Deserialize)]
struct AgentRecord {
    #[serde(rename = "box")]
    bbox: [f64; 7],
    class: String,
    vel: [f64; 2],
    gt_track: Option<Vec<[f64; 7]>>,
}

fn box_fields(b: &OrientedBox) -> [f64; 7] {
    [
        b.center_x, b.center_y, b.center_z, b.length, b.width, b.height, b.heading,
    ]
}

fn box_from(v: &[f64; 7], class: &str) -> Result<OrientedBox> {
    OrientedBox::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], class)
}

fn pose_fields(p: &Pose2D) -> [f64; 3] {
    [p.x, p.y, p.heading]
}

impl From<&Scenario> for ScenarioRecord {
    fn from(s: &Scenario) -> Self {
        ScenarioRecord {
            id: s.id.clone(),
            ego_history: s.ego_history.iter().map(pose_fields).collect(),
            ego_speed: s.ego_speed,
            agents: s
                .agents
                .iter()
                .map(|a| AgentRecord {
                    bbox: box_fields(&a.bbox),
                    class: a.bbox.class_name.clone(),
                    vel: [a.velocity.x, a.velocity.y],
                    gt_track: a.gt_track.as_ref().map(|t| t.iter().map(box_fields).collect()),
                })
                .collect(),
            drivable_area: s.drivable_area.vertices().iter().map(|v| [v.x, v.y]).collect(),
            centerline: s.centerline.iter().map(|v| [v.x, v.y]).collect(),
            nav: s.nav_command,
            gt_trajectory: s
                .gt_trajectory
                .as_ref()
                .map(|t| t.points().iter().map(pose_fields).collect()),
        }
    }
}

/// Converts a parsed record into a validated scenario; errors carry the
/// offending field name.
fn scenario_from_record(r: ScenarioRecord) -> std::result::Result<Scenario, (String, String)> {
    fn field_err(field: &str) -> impl Fn(Error) -> (String, String) + '_ {
        move |e| (field.to_string(), e.to_string())
    }
    if r.ego_history.len() != HISTORY_LEN {
        return Err((
            "ego_history".into(),
            format!("expected {HISTORY_LEN} poses, got {}", r.ego_history.len()),
        ));
    }
    let history: Vec<Pose2D> = r.ego_history.iter().map(|p| Pose2D::new(p[0], p[1], p[2])).collect();
    let mut agents = Vec::with_capacity(r.agents.len());
    for (i, a) in r.agents.iter().enumerate() {
        let bbox = box_from(&a.bbox, &a.class).map_err(field_err(&format!("agents[{i}].box")))?;
        let gt_track = match &a.gt_track {
            None => None,
            Some(t) => Some(
                t.iter()
                    .map(|b| box_from(b, &a.class))
                    .collect::<Result<Vec<_>>>()
                    .map_err(field_err(&format!("agents[{i}].gt_track")))?,
            ),
        };
        let agent = AgentTrack {
            bbox,
            velocity: Vec2::new(a.vel[0], a.vel[1]),
            gt_track,
        };
        agent.validate().map_err(field_err(&format!("agents[{i}]")))?;
        agents.push(agent);
    }
    let drivable_area = Polygon::new(r.drivable_area.iter().map(|v| Vec2::new(v[0], v[1])).collect())
        .map_err(field_err("drivable_area"))?;
    let gt_trajectory = match r.gt_trajectory {
        None => None,
        Some(points) => Some(
            Trajectory::new(points.iter().map(|p| Pose2D::new(p[0], p[1], p[2])).collect())
                .map_err(field_err("gt_trajectory"))?,
        ),
    };
    let scenario = Scenario {
        id: r.id,
        ego_history: history.try_into().expect("length checked"),
        ego_speed: r.ego_speed,
        agents,
        drivable_area,
        centerline: r.centerline.iter().map(|v| Vec2::new(v[0], v[1])).collect(),
        nav_command: r.nav,
        gt_trajectory,
    };
    scenario
        .validate()
        .map_err(|e| ("scenario".to_string(), e.to_string()))?;
    Ok(scenario)
}

pub fn scenario_to_json_line(s: &Scenario) -> String {
    serde_json::to_string(&ScenarioRecord::from(s)).expect("scenario records always serialize")
}

pub fn save_corpus(path: impl AsRef<Path>, scenarios: &[Scenario]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for s in scenarios {
        out.extend_from_slice(scenario_to_json_line(s).as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_corpus_from_str(&text, path)
}

/// Parses corpus text; `origin` only labels error messages. Blank lines are skipped.
pub fn load_corpus_from_str(text: &str, origin: &Path) -> Result<Vec<Scenario>> {
    let mut scenarios = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |field: String, message: String| Error::Line {
            path: origin.to_path_buf(),
            line: idx + 1,
            field,
            message,
        };
        let mut de = serde_json::Deserializer::from_str(line);
        let record: ScenarioRecord = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let field = e.path().to_string();
            line_err(field, e.into_inner().to_string())
        })?;
        let scenario = scenario_from_record(record).map_err(|(f, m)| line_err(f, m))?;
        scenarios.push(scenario);
    }
    Ok(scenarios)
}
