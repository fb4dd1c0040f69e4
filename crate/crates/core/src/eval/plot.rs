//! Static bird's-eye-view SVG of one rollout, one panel per turn. Red crosses
//! mark waypoints that leave the drivable area, blue marks TTC evidence and
//! yellow marks collisions.

use std::fmt::Write;

use crate::env::Rollout;
use crate::geometry::{OrientedBox, Vec2};
use crate::pdm::PdmConfig;
use crate::scenario::Scenario;

const PX_PER_M: f64 = 10.0;
const X_MIN: f64 = -12.0;
const X_MAX: f64 = 52.0;
const Y_MIN: f64 = -10.0;
const Y_MAX: f64 = 10.0;
const TITLE_H: f64 = 18.0;
const PANEL_W: f64 = (X_MAX - X_MIN) * PX_PER_M;
const PANEL_H: f64 = (Y_MAX - Y_MIN) * PX_PER_M + TITLE_H;

const NC_COLOR: &str = "#e6b800";
const TTC_COLOR: &str = "#1f5fd6";
const DAC_COLOR: &str = "#d62728";

struct Panel {
    top: f64,
}

impl Panel {
    fn px(&self, p: Vec2) -> (f64, f64) {
        ((p.x - X_MIN) * PX_PER_M, self.top + TITLE_H + (Y_MAX - p.y) * PX_PER_M)
    }

    fn points(&self, pts: &[Vec2]) -> String {
        pts.iter()
            .map(|&p| {
                let (x, y) = self.px(p);
                format!("{x:.1},{y:.1}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn boxed(&self, out: &mut String, b: &OrientedBox, stroke: &str, fill: &str) {
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="{fill}" stroke="{stroke}" stroke-width="1.5"/>"##,
            self.points(&b.corners())
        );
    }

    fn dot(&self, out: &mut String, p: Vec2, r: f64, color: &str) {
        let (x, y) = self.px(p);
        let _ = writeln!(out, r##"<circle cx="{x:.1}" cy="{y:.1}" r="{r}" fill="{color}"/>"##);
    }

    fn cross(&self, out: &mut String, p: Vec2, color: &str) {
        let (x, y) = self.px(p);
        let d = 5.0;
        let _ = writeln!(
            out,
            r##"<path d="M{:.1},{:.1}L{:.1},{:.1}M{:.1},{:.1}L{:.1},{:.1}" stroke="{color}" stroke-width="2.5"/>"##,
            x - d,
            y - d,
            x + d,
            y + d,
            x - d,
            y + d,
            x + d,
            y - d
        );
    }
}

/// Renders `rollout` over `scenario`.
pub fn bev_svg(scenario: &Scenario, rollout: &Rollout, cfg: &PdmConfig) -> String {
    let panels = rollout.turns.len().max(1);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{}" font-family="monospace" font-size="12">"##,
        PANEL_H * panels as f64
    );
    for (i, turn) in rollout.turns.iter().enumerate() {
        let panel = Panel {
            top: i as f64 * PANEL_H,
        };
        let _ = writeln!(
            out,
            r##"<rect x="0" y="{:.1}" width="{PANEL_W}" height="{PANEL_H}" fill="white" stroke="#999"/>"##,
            panel.top
        );
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#e8e8e8" stroke="#bbb"/>"##,
            panel.points(scenario.drivable_area.vertices())
        );
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#888" stroke-dasharray="6,4"/>"##,
            panel.points(&scenario.centerline)
        );
        for a in &scenario.agents {
            panel.boxed(&mut out, &a.bbox, "#333", "none");
        }
        for p in &scenario.ego_history {
            panel.dot(&mut out, p.position(), 2.0, "#777");
        }
        if let Some(traj) = &turn.trajectory {
            let pts: Vec<Vec2> = std::iter::once(Vec2 { x: 0.0, y: 0.0 })
                .chain(traj.points().iter().map(|p| p.position()))
                .collect();
            let _ = writeln!(
                out,
                r##"<polyline points="{}" fill="none" stroke="#2ca02c" stroke-width="2"/>"##,
                panel.points(&pts)
            );
            for p in traj.points() {
                panel.dot(&mut out, p.position(), 2.5, "#2ca02c");
            }
        }
        for v in &turn.feedback.nc {
            panel.boxed(&mut out, &v.bbox, NC_COLOR, "none");
            panel.dot(&mut out, v.point.position(), 4.0, NC_COLOR);
        }
        for v in &turn.feedback.ttc {
            panel.boxed(&mut out, &v.bbox, TTC_COLOR, "none");
            panel.dot(&mut out, v.point.position(), 4.0, TTC_COLOR);
        }
        for v in &turn.feedback.dac {
            panel.cross(&mut out, v.point.position(), DAC_COLOR);
        }
        let status = if turn.trajectory.is_none() {
            "format error".to_string()
        } else {
            format!("PDMS {:.3}", turn.pdms(cfg))
        };
        let _ = writeln!(
            out,
            r##"<text x="6" y="{:.1}">{}  turn {}  {}</text>"##,
            panel.top + 13.0,
            scenario.id,
            turn.j,
            status
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{run_episode, EnvConfig, FixedPolicy};
    use crate::policy::TokenCodec;
    use crate::scenario::generate_scenarios;

    #[test]
    fn marks_violations_with_their_colors() {
        let s = &generate_scenarios(2, 1, &["lead_vehicle_brake"]).unwrap()[0];
        let codec = TokenCodec::default();
        let fast = codec.encode(&s.constant_velocity_extrapolation().unwrap());
        let policy = FixedPolicy { codec, tokens: fast };
        let cfg = EnvConfig {
            max_turns: 2,
            ..EnvConfig::default()
        };
        let r = run_episode(&policy, s, &cfg, 0).unwrap();
        let svg = bev_svg(s, &r, &cfg.pdm);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("turn ").count(), 2);
        let fb = &r.turns[0].feedback;
        assert!(!fb.nc.is_empty() || !fb.ttc.is_empty());
        assert!(svg.contains(NC_COLOR) || svg.contains(TTC_COLOR));
    }

    #[test]
    fn dac_points_are_red_crosses() {
        let s = &generate_scenarios(2, 1, &["straight_corridor"]).unwrap()[0];
        let codec = TokenCodec::default();
        // hard left, leaves the corridor
        let tokens: Vec<_> = (0..8).map(|_| codec.token(4, 8)).chain([codec.terminator()]).collect();
        let policy = FixedPolicy { codec, tokens };
        let cfg = EnvConfig {
            max_turns: 1,
            ..EnvConfig::default()
        };
        let r = run_episode(&policy, s, &cfg, 0).unwrap();
        assert!(!r.turns[0].feedback.dac.is_empty());
        let svg = bev_svg(s, &r, &cfg.pdm);
        assert_eq!(svg.matches(DAC_COLOR).count(), r.turns[0].feedback.dac.len());
    }
}
