//! Scripted expert: discrete speed levels with a gap-keeping rule.
//!
//! Speeds move in 1.5 m/s increments per 0.5 s step, so each waypoint step is
//! a multiple of 0.75 m and the plan is exactly representable by the token
//! codec. A candidate speed is accepted only if braking from it (after one
//! hold step when accelerating) keeps an inflated, forward-projected ego
//! footprint clear of every agent under the ground-truth tracks. The
//! acceleration never flips sign between consecutive steps.

use super::{agent_box_at, AgentTrack, PerceptionMode, Trajectory, HORIZON_S, HORIZON_STEPS, STEP_DT};
use crate::geometry::{boxes_overlap, OrientedBox, Vec2};

pub(crate) const SPEED_QUANTUM: f64 = 1.5;
pub(crate) const MAX_SPEED: f64 = 12.0;

const MARGIN_LONG: f64 = 1.0;
const MARGIN_LAT: f64 = 0.2;
const PROJECTION_S: f64 = 1.0;
const PROJECTION_STEPS: usize = 10;

/// What to do when no candidate speed is provably clear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Fallback {
    Brake,
    Accelerate,
}

pub(crate) struct ExpertPlanner<'a> {
    pub agents: &'a [AgentTrack],
    pub ego_length: f64,
    pub ego_width: f64,
}

impl ExpertPlanner<'_> {
    fn clear(&self, x: f64, y: f64, v: f64, t: f64) -> bool {
        for step in 0..=PROJECTION_STEPS {
            let s = step as f64 * PROJECTION_S / PROJECTION_STEPS as f64;
            let tt = (t + s).min(HORIZON_S);
            let ego = OrientedBox {
                center_x: x + v * s,
                center_y: y,
                center_z: 0.0,
                length: self.ego_length + 2.0 * MARGIN_LONG,
                width: self.ego_width + 2.0 * MARGIN_LAT,
                height: 1.5,
                heading: 0.0,
                class_name: "ego".into(),
            };
            for a in self.agents {
                let other = agent_box_at(a, tt, PerceptionMode::GtOracle).expect("generated agents carry tracks");
                if boxes_overlap(&ego, &other) {
                    return false;
                }
            }
        }
        true
    }

    /// Checks the braking continuation that starts with speed `cand` at step `k`.
    fn continuation_clear(&self, x_prev: f64, v_prev: f64, cand: f64, k: usize, lateral: &[f64]) -> bool {
        let mut x = x_prev;
        let mut v = cand;
        let mut hold = cand > v_prev;
        for m in k..HORIZON_STEPS {
            if m > k {
                if hold {
                    hold = false;
                } else {
                    v = (v - SPEED_QUANTUM).max(0.0);
                }
            }
            x += v * STEP_DT;
            if !self.clear(x, lateral[m], v, Trajectory::time_of(m)) {
                return false;
            }
        }
        true
    }

    /// Plans x positions for the eight waypoints given per-waypoint lateral offsets.
    pub fn plan(&self, v0: f64, v_cap: f64, lateral: &[f64; HORIZON_STEPS], fallback: Fallback) -> Vec<Vec2> {
        let v_cap = v_cap.min(MAX_SPEED);
        let mut x = 0.0;
        let mut v = v0;
        let mut prev_accel = 0.0f64;
        let mut out = Vec::with_capacity(HORIZON_STEPS);
        for k in 0..HORIZON_STEPS {
            let mut candidates = Vec::with_capacity(3);
            if prev_accel >= 0.0 && v + SPEED_QUANTUM <= v_cap + 1e-9 {
                candidates.push(v + SPEED_QUANTUM);
            }
            candidates.push(v.min(v_cap));
            if prev_accel <= 0.0 && v > 0.0 {
                candidates.push((v - SPEED_QUANTUM).max(0.0));
            }
            let chosen = candidates
                .iter()
                .copied()
                .find(|&c| self.continuation_clear(x, v, c, k, lateral))
                .unwrap_or(match fallback {
                    Fallback::Brake => *candidates.last().expect("non-empty"),
                    Fallback::Accelerate => candidates[0],
                });
            prev_accel = chosen - v;
            v = chosen;
            x += v * STEP_DT;
            out.push(Vec2::new(x, lateral[k]));
        }
        out
    }
}
