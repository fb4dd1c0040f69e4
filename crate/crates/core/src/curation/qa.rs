//! Yes/no questions about single metric checks, labeled by the scorer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Pose2D};
use crate::pdm::feedback::{render_box, render_point};
use crate::pdm::{self, PdmConfig};
use crate::rng::{label_seed, stream};
use crate::scenario::{agent_box_at, PerceptionMode, Scenario, Trajectory, HORIZON_STEPS};

const MAX_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QaMetric {
    Nc,
    Dac,
    Ttc,
}

impl QaMetric {
    const ALL: [QaMetric; 3] = [QaMetric::Nc, QaMetric::Dac, QaMetric::Ttc];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QaBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub heading: f64,
    pub class_name: String,
}

impl From<&OrientedBox> for QaBox {
    fn from(b: &OrientedBox) -> Self {
        QaBox {
            center: [b.center_x, b.center_y, b.center_z],
            size: [b.length, b.width, b.height],
            heading: b.heading,
            class_name: b.class_name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QaQuery {
    pub text: String,
    pub point: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object: Option<QaBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
}

fn yes_no<S: Serializer>(label: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(if *label { "yes" } else { "no" })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdmQaSample {
    pub scenario_id: String,
    pub metric: QaMetric,
    pub query: QaQuery,
    #[serde(serialize_with = "yes_no")]
    pub label: bool,
    #[serde(skip)]
    pub pose: Pose2D,
    #[serde(skip)]
    pub bbox: Option<OrientedBox>,
}

impl PdmQaSample {
    /// Re-evaluates the query with the scorer.
    pub fn verdict(&self, scenario: &Scenario, cfg: &PdmConfig) -> bool {
        match (self.metric, &self.bbox) {
            (QaMetric::Dac, _) => pdm::pose_in_drivable_area(&self.pose, scenario, cfg),
            (QaMetric::Nc, Some(b)) => pdm::pose_collides(&self.pose, b, cfg),
            (QaMetric::Ttc, Some(b)) => {
                pdm::pose_time_to_collision_conflict(&self.pose, self.query.speed.unwrap_or(0.0), b, cfg)
            }
            _ => false,
        }
    }
}

/// An object to ask about: a real agent at some waypoint time, or a parked
/// vehicle placed on the centerline when the scenario has no agents.
fn pick_object(s: &Scenario, rng: &mut ChaCha8Rng) -> Result<OrientedBox> {
    if s.agents.is_empty() {
        let x = rng.gen_range(15.0..40.0);
        return OrientedBox::new(x, s.centerline_y_at(x), 0.0, 4.5, 1.9, 1.6, 0.0, "vehicle");
    }
    let agent = &s.agents[rng.gen_range(0..s.agents.len())];
    let k = rng.gen_range(0..HORIZON_STEPS);
    agent_box_at(agent, Trajectory::time_of(k), PerceptionMode::GtOracle)
}

fn candidate(
    metric: QaMetric,
    want: bool,
    s: &Scenario,
    rng: &mut ChaCha8Rng,
) -> Result<(Pose2D, Option<OrientedBox>, Option<f64>)> {
    Ok(match metric {
        QaMetric::Dac => {
            let pose = if want {
                let x = rng.gen_range(2.0..40.0);
                Pose2D::new(
                    x,
                    s.centerline_y_at(x) + rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.05..0.05),
                )
            } else if rng.gen_bool(0.5) {
                let x = rng.gen_range(2.0..40.0);
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                Pose2D::new(x, s.centerline_y_at(x) + side * rng.gen_range(5.0..12.0), 0.0)
            } else {
                Pose2D::new(rng.gen_range(95.0..120.0), 0.0, 0.0)
            };
            (pose, None, None)
        }
        QaMetric::Nc => {
            let b = pick_object(s, rng)?;
            let pose = if want {
                Pose2D::new(
                    b.center_x + rng.gen_range(-1.5..1.5),
                    b.center_y + rng.gen_range(-0.8..0.8),
                    b.heading + rng.gen_range(-0.2..0.2),
                )
            } else {
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                Pose2D::new(
                    b.center_x + rng.gen_range(-6.0..6.0),
                    b.center_y + side * rng.gen_range(3.5..10.0),
                    rng.gen_range(-0.2..0.2),
                )
            };
            (pose, Some(b), None)
        }
        QaMetric::Ttc => {
            let b = pick_object(s, rng)?;
            let gap = rng.gen_range(5.0..15.0);
            let pose = Pose2D::new(b.center_x - gap, b.center_y + rng.gen_range(-0.5..0.5), 0.0);
            let speed = if want {
                rng.gen_range(gap * 1.1..gap * 2.0 + 8.0)
            } else {
                rng.gen_range(0.0..(gap - 5.0).max(0.5))
            };
            (pose, Some(b), Some(speed))
        }
    })
}

fn question(metric: QaMetric, pose: &Pose2D, b: Option<&OrientedBox>, speed: Option<f64>, cfg: &PdmConfig) -> String {
    let p = render_point(pose);
    match (metric, b) {
        (QaMetric::Dac, _) => format!("Does trajectory point {p} stay within the drivable area?"),
        (QaMetric::Nc, Some(b)) => format!("Does the ego vehicle at trajectory point {p} collide with object {}?", render_box(b)),
        (QaMetric::Ttc, Some(b)) => format!(
            "Moving straight ahead at {:.1} m/s from trajectory point {p}, does the ego vehicle come within collision of object {} in the next {} s?",
            speed.unwrap_or(0.0),
            render_box(b),
            cfg.ttc_horizon
        ),
        _ => String::new(),
    }
}

/// `per_scenario` questions per metric and scenario, alternating yes/no.
/// Output is ordered by scenario id, metric, then question index.
pub fn gen_pdm_qa(corpus: &[Scenario], per_scenario: usize, seed: u64, cfg: &PdmConfig) -> Result<Vec<PdmQaSample>> {
    if per_scenario < 2 {
        return Err(Error::config("per_scenario must be at least 2"));
    }
    let mut order: Vec<&Scenario> = corpus.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = Vec::new();
    for s in order {
        for (mi, metric) in QaMetric::ALL.into_iter().enumerate() {
            for i in 0..per_scenario {
                let want = i % 2 == 0;
                let mut rng = stream(&[seed, label_seed(&s.id), mi as u64, i as u64]);
                let mut found = None;
                for _ in 0..MAX_ATTEMPTS {
                    let (pose, bbox, speed) = candidate(metric, want, s, &mut rng)?;
                    let sample = PdmQaSample {
                        scenario_id: s.id.clone(),
                        metric,
                        query: QaQuery {
                            text: question(metric, &pose, bbox.as_ref(), speed, cfg),
                            point: [pose.x, pose.y, pose.heading],
                            object: bbox.as_ref().map(QaBox::from),
                            speed,
                        },
                        label: want,
                        pose,
                        bbox,
                    };
                    if sample.verdict(s, cfg) == want {
                        found = Some(sample);
                        break;
                    }
                }
                out.push(found.ok_or_else(|| {
                    Error::data(format!("scenario {}: could not construct a {metric:?} question", s.id))
                })?);
            }
        }
    }
    Ok(out)
}

pub fn qa_json_line(q: &PdmQaSample) -> String {
    serde_json::to_string(q).expect("qa records serialize")
}
