//! Fixed-width numeric encoding of a scenario plus the last turn's outcome,
//! and the token prefix that grows turn by turn.

use std::ops::Sub;

use crate::pdm::Feedback;
use crate::policy::TokenId;
use crate::scenario::{Scenario, Trajectory, HISTORY_LEN, HORIZON_STEPS};

/// Nearest agents encoded per context.
pub const K_AGENTS: usize = 5;
const AGENT_FEATURES: usize = 9;
const STATIONS: [f64; 5] = [5.0, 15.0, 25.0, 35.0, 45.0];
pub const FEEDBACK_FEATURES: usize = 14;

const EGO_OFFSET: usize = 0;
const NAV_OFFSET: usize = EGO_OFFSET + 1 + 2 * (HISTORY_LEN - 1);
const AGENT_OFFSET: usize = NAV_OFFSET + 3;
const CORRIDOR_OFFSET: usize = AGENT_OFFSET + K_AGENTS * AGENT_FEATURES;
const CENTERLINE_OFFSET: usize = CORRIDOR_OFFSET + 2 * STATIONS.len();
pub(crate) const FEEDBACK_OFFSET: usize = CENTERLINE_OFFSET + STATIONS.len();
const PREV_TRAJ_OFFSET: usize = FEEDBACK_OFFSET + FEEDBACK_FEATURES;
const TURN_OFFSET: usize = PREV_TRAJ_OFFSET + 2 * HORIZON_STEPS;
pub const CONTEXT_DIM: usize = TURN_OFFSET + 1;

/// Prompt-side token ids live above any waypoint vocabulary.
pub const PROMPT_TOKEN_BASE: TokenId = 1 << 16;
const TOK_SCENARIO: TokenId = PROMPT_TOKEN_BASE;
const TOK_FEEDBACK_OPEN: TokenId = PROMPT_TOKEN_BASE + 1;
const TOK_FEEDBACK_CLOSE: TokenId = PROMPT_TOKEN_BASE + 2;
const TOK_FORMAT: TokenId = PROMPT_TOKEN_BASE + 3;
const TOK_NC: TokenId = PROMPT_TOKEN_BASE + 4;
const TOK_DAC: TokenId = PROMPT_TOKEN_BASE + 5;
const TOK_TTC: TokenId = PROMPT_TOKEN_BASE + 6;
const TOK_INDEX: TokenId = PROMPT_TOKEN_BASE + 16;

/// One completed turn as seen by later turns.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryTurn {
    pub response: Vec<TokenId>,
    pub trajectory: Option<Trajectory>,
    pub feedback: Feedback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub features: Vec<f64>,
    /// Scenario marker followed by every prior response and its feedback.
    pub prefix: Vec<TokenId>,
    /// 1-based index of the turn about to be generated.
    pub turn: usize,
}

pub fn feedback_tokens(fb: &Feedback) -> Vec<TokenId> {
    let mut out = vec![TOK_FEEDBACK_OPEN];
    if fb.format_error {
        out.push(TOK_FORMAT);
    }
    for v in &fb.nc {
        out.extend([TOK_NC, TOK_INDEX + v.point_index as TokenId]);
    }
    for v in &fb.dac {
        out.extend([TOK_DAC, TOK_INDEX + v.point_index as TokenId]);
    }
    for v in &fb.ttc {
        out.extend([TOK_TTC, TOK_INDEX + v.point_index as TokenId]);
    }
    out.push(TOK_FEEDBACK_CLOSE);
    out
}

fn agent_features(scenario: &Scenario, out: &mut [f64]) {
    let mut order: Vec<usize> = (0..scenario.agents.len()).collect();
    order.sort_by(|&a, &b| {
        let da = scenario.agents[a].bbox.center().norm();
        let db = scenario.agents[b].bbox.center().norm();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    for (slot, &ai) in order.iter().take(K_AGENTS).enumerate() {
        let a = &scenario.agents[ai];
        let f = &mut out[slot * AGENT_FEATURES..(slot + 1) * AGENT_FEATURES];
        f[0] = a.bbox.center_x / 30.0;
        f[1] = a.bbox.center_y / 10.0;
        f[2] = a.velocity.x / 10.0;
        f[3] = a.velocity.y / 10.0;
        f[4] = a.bbox.length / 10.0;
        f[5] = a.bbox.width / 5.0;
        f[6] = a.bbox.heading.cos();
        f[7] = a.bbox.heading.sin();
        f[8] = 1.0;
    }
}

fn feedback_features(fb: &Feedback, out: &mut [f64]) {
    out[0] = 1.0;
    out[1] = f64::from(u8::from(fb.format_error));
    out[2] = f64::from(u8::from(!fb.nc.is_empty()));
    out[3] = f64::from(u8::from(!fb.dac.is_empty()));
    out[4] = f64::from(u8::from(!fb.ttc.is_empty()));
    let first_index = |i: Option<usize>| i.map_or(0.0, |k| (k + 1) as f64 / HORIZON_STEPS as f64);
    let first_nc = fb.nc.iter().min_by_key(|v| v.point_index);
    let first_ttc = fb.ttc.iter().min_by_key(|v| v.point_index);
    out[5] = first_index(first_nc.map(|v| v.point_index));
    out[6] = first_index(fb.dac.first().map(|v| v.point_index));
    out[7] = first_index(first_ttc.map(|v| v.point_index));
    out[8] = fb.dac.first().map_or(0.0, |v| v.point.y / 3.0);
    if let Some(v) = first_nc {
        out[9] = (v.bbox.center_x - v.point.x) / 10.0;
        out[10] = (v.bbox.center_y - v.point.y) / 5.0;
    }
    if let Some(v) = first_ttc {
        out[11] = (v.bbox.center_x - v.point.x) / 10.0;
        out[12] = (v.bbox.center_y - v.point.y) / 5.0;
    }
    out[13] = fb.dac.len() as f64 / HORIZON_STEPS as f64;
}

/// Encodes the scenario and its turn history. Only the most recent turn's
/// trajectory and feedback enter the numeric features; the token prefix
/// carries the whole history.
pub fn encode_context(scenario: &Scenario, history: &[HistoryTurn]) -> Context {
    let mut f = vec![0.0; CONTEXT_DIM];
    f[EGO_OFFSET] = scenario.ego_speed / 10.0;
    for i in 0..HISTORY_LEN - 1 {
        let d = scenario.ego_history[i + 1]
            .position()
            .sub(scenario.ego_history[i].position());
        f[EGO_OFFSET + 1 + 2 * i] = d.x / 5.0;
        f[EGO_OFFSET + 2 + 2 * i] = d.y / 5.0;
    }
    f[NAV_OFFSET + scenario.nav_command.index()] = 1.0;
    agent_features(scenario, &mut f[AGENT_OFFSET..CORRIDOR_OFFSET]);
    for (s, &x) in STATIONS.iter().enumerate() {
        let ys = scenario.drivable_area.vertical_crossings(x);
        if let (Some(lo), Some(hi)) = (ys.first(), ys.last()) {
            f[CORRIDOR_OFFSET + 2 * s] = hi.clamp(-10.0, 10.0) / 5.0;
            f[CORRIDOR_OFFSET + 2 * s + 1] = lo.clamp(-10.0, 10.0) / 5.0;
        }
        f[CENTERLINE_OFFSET + s] = scenario.centerline_y_at(x) / 3.0;
    }
    let mut prefix = vec![TOK_SCENARIO];
    for h in history {
        prefix.extend_from_slice(&h.response);
        prefix.extend(feedback_tokens(&h.feedback));
    }
    if let Some(last) = history.last() {
        feedback_features(&last.feedback, &mut f[FEEDBACK_OFFSET..PREV_TRAJ_OFFSET]);
        if let Some(t) = &last.trajectory {
            for (k, p) in t.points().iter().enumerate() {
                f[PREV_TRAJ_OFFSET + 2 * k] = p.x / 30.0;
                f[PREV_TRAJ_OFFSET + 2 * k + 1] = p.y / 3.0;
            }
        }
    }
    f[TURN_OFFSET] = history.len() as f64 / 6.0;
    Context {
        features: f,
        prefix,
        turn: history.len() + 1,
    }
}

/// The feedback slice of a feature vector.
pub fn feedback_slice(features: &[f64]) -> &[f64] {
    &features[FEEDBACK_OFFSET..FEEDBACK_OFFSET + FEEDBACK_FEATURES]
}
