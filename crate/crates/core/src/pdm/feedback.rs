//! Canonical text rendering of violated metrics. The exact byte layout is
//! documented in `docs/feedback-format.md` and pinned by golden tests.

use std::fmt::Write;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{DacViolation, Violation};
use crate::geometry::{OrientedBox, Pose2D};

const OBJECT_LEGEND: &str = "The format for describing these objects is: (x, y, z, l, w, h, heading, name). \
Where x, y, z are the center coordinates of the object in ego-coordinate system, \
l, w, h are length, width, height of the bounding box, heading is the object heading, \
and name is the object class name. \
The specific trajectory points and their corresponding objects are as follows:";

const NC_HEADLINE: &str = "The NC metric reveals that certain trajectory points collide with surrounding objects.";
const TTC_HEADLINE: &str =
    "The TTC metric reveals that certain trajectory points fail to maintain a safe distance from surrounding objects.";
const DAC_HEADLINE: &str = "The DAC metric reveals that certain trajectory points fall outside the drivable area. \
The specific trajectory points are as follows:";
const FORMAT_HEADLINE: &str = "The previous response could not be parsed as a trajectory. \
Use [PT, ...] to encapsulate exactly 8 trajectory points.";

/// Rounds to two decimals and prints the shortest form with at least one
/// decimal digit: `3.10 -> "3.1"`, `0 -> "0.0"`, `-0.004 -> "0.0"`.
pub fn format_coord(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        return "0.0".to_string();
    }
    let s = format!("{r:.2}");
    let trimmed = s.trim_end_matches('0');
    if trimmed.ends_with('.') {
        format!("{trimmed}0")
    } else {
        trimmed.to_string()
    }
}

/// Like [`format_coord`] with an explicit `+` on positive values.
pub fn format_signed(v: f64) -> String {
    let s = format_coord(v);
    if s != "0.0" && !s.starts_with('-') {
        format!("+{s}")
    } else {
        s
    }
}

pub(crate) fn render_point(p: &Pose2D) -> String {
    format!(
        "({}, {}, {})",
        format_signed(p.x),
        format_signed(p.y),
        format_signed(p.heading)
    )
}

pub(crate) fn render_box(b: &OrientedBox) -> String {
    format!(
        "({}, {}, {}, {}, {}, {}, {}, {})",
        format_coord(b.center_x),
        format_coord(b.center_y),
        format_coord(b.center_z),
        format_coord(b.length),
        format_coord(b.width),
        format_coord(b.height),
        format_coord(b.heading),
        b.class_name
    )
}

/// Per-metric violation records of one scored turn.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Feedback {
    pub nc: Vec<Violation>,
    pub dac: Vec<DacViolation>,
    pub ttc: Vec<Violation>,
    /// Set when the response did not decode into a trajectory.
    pub format_error: bool,
}

impl Feedback {
    pub fn format_failure() -> Self {
        Self {
            format_error: true,
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nc.is_empty() && self.dac.is_empty() && self.ttc.is_empty() && !self.format_error
    }

    /// Numbered issue list; empty string when nothing failed.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let mut item = 0;
        let mut next = |out: &mut String| {
            item += 1;
            if !out.is_empty() {
                out.push('\n');
            }
            let _ = write!(out, "{item}. ");
        };
        if self.format_error {
            next(&mut out);
            out.push_str(FORMAT_HEADLINE);
        }
        if !self.nc.is_empty() {
            next(&mut out);
            let _ = write!(out, "{NC_HEADLINE} {OBJECT_LEGEND}");
            render_object_violations(&mut out, &self.nc);
        }
        if !self.dac.is_empty() {
            next(&mut out);
            out.push_str(DAC_HEADLINE);
            for (i, v) in self.dac.iter().enumerate() {
                let _ = write!(out, "\nTrajectory Point {}: {}.", i + 1, render_point(&v.point));
            }
        }
        if !self.ttc.is_empty() {
            next(&mut out);
            let _ = write!(out, "{TTC_HEADLINE} {OBJECT_LEGEND}");
            render_object_violations(&mut out, &self.ttc);
        }
        out
    }

    /// Full follow-up prompt wrapped around [`Feedback::text`].
    pub fn render_prompt(&self) -> String {
        format!(
            "This was your previous trajectory prediction. Analyze this trajectory data and propose a revised prediction. \
Consider the following identified issues:\n{}\nBased on these issues, provide an improved trajectory prediction.",
            self.text()
        )
    }
}

/// Groups violations that share a waypoint onto one line.
fn render_object_violations(out: &mut String, violations: &[Violation]) {
    let mut ordinal = 0;
    let mut i = 0;
    while i < violations.len() {
        let k = violations[i].point_index;
        let mut j = i;
        let mut objects = Vec::new();
        while j < violations.len() && violations[j].point_index == k {
            objects.push(render_box(&violations[j].bbox));
            j += 1;
        }
        ordinal += 1;
        let _ = write!(
            out,
            "\nTrajectory Point {ordinal}: {} with Objects: {}.",
            render_point(&violations[i].point),
            objects.join(", ")
        );
        i = j;
    }
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    index: usize,
    point: [f64; 3],
    #[serde(rename = "box")]
    bbox: [f64; 7],
    class: String,
}

#[derive(Serialize, Deserialize)]
struct PointRecord {
    index: usize,
    point: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct FeedbackRecord {
    nc: Vec<ObjectRecord>,
    dac: Vec<PointRecord>,
    ttc: Vec<ObjectRecord>,
    format_error: bool,
}

fn object_record(v: &Violation) -> ObjectRecord {
    let b = &v.bbox;
    ObjectRecord {
        index: v.point_index,
        point: [v.point.x, v.point.y, v.point.heading],
        bbox: [
            b.center_x, b.center_y, b.center_z, b.length, b.width, b.height, b.heading,
        ],
        class: b.class_name.clone(),
    }
}

fn object_from(r: ObjectRecord) -> Result<Violation, String> {
    let b = OrientedBox::new(
        r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3], r.bbox[4], r.bbox[5], r.bbox[6], r.class,
    )
    .map_err(|e| e.to_string())?;
    Ok(Violation {
        point_index: r.index,
        point: Pose2D::new(r.point[0], r.point[1], r.point[2]),
        bbox: b,
    })
}

impl Serialize for Feedback {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        FeedbackRecord {
            nc: self.nc.iter().map(object_record).collect(),
            dac: self
                .dac
                .iter()
                .map(|d| PointRecord {
                    index: d.point_index,
                    point: [d.point.x, d.point.y, d.point.heading],
                })
                .collect(),
            ttc: self.ttc.iter().map(object_record).collect(),
            format_error: self.format_error,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Feedback {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = FeedbackRecord::deserialize(d)?;
        let conv = |v: Vec<ObjectRecord>| {
            v.into_iter()
                .map(object_from)
                .collect::<Result<Vec<_>, _>>()
                .map_err(serde::de::Error::custom)
        };
        Ok(Feedback {
            nc: conv(r.nc)?,
            dac: r
                .dac
                .into_iter()
                .map(|p| DacViolation {
                    point_index: p.index,
                    point: Pose2D::new(p.point[0], p.point[1], p.point[2]),
                })
                .collect(),
            ttc: conv(r.ttc)?,
            format_error: r.format_error,
        })
    }
}
