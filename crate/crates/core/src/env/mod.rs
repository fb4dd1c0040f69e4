//! Multi-turn propose / score / feedback loop.

mod context;

pub use context::{
    encode_context, feedback_slice, feedback_tokens, Context, HistoryTurn, CONTEXT_DIM, FEEDBACK_FEATURES, K_AGENTS,
    PROMPT_TOKEN_BASE,
};

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pdm::{self, Feedback, MetricReport, PdmConfig};
use crate::policy::{PolicyNet, TokenCodec, TokenId, RESPONSE_BUDGET};
use crate::rng::stream;
use crate::scenario::{PerceptionMode, Scenario, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvConfig {
    pub max_turns: usize,
    pub stop_on_clean: bool,
    pub perception: PerceptionMode,
    pub temperature: f64,
    pub pdm: PdmConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_turns: 6,
            stop_on_clean: true,
            perception: PerceptionMode::GtOracle,
            temperature: 1.0,
            pdm: PdmConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 {
            return Err(Error::config("max_turns must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        self.pdm.validate()
    }
}

/// Tokens emitted for one turn and their sampling log-probabilities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Response {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
}

/// Anything that can answer a turn. Implementations must be usable from
/// several threads at once.
pub trait TurnPolicy: Sync {
    fn codec(&self) -> &TokenCodec;
    fn respond(&self, scenario: &Scenario, context: &Context, rng: &mut ChaCha8Rng) -> Result<Response>;
}

/// Samples from a network snapshot.
pub struct NetPolicy<'a> {
    pub net: &'a PolicyNet,
    pub codec: &'a TokenCodec,
    pub temperature: f64,
}

impl TurnPolicy for NetPolicy<'_> {
    fn codec(&self) -> &TokenCodec {
        self.codec
    }

    fn respond(&self, _scenario: &Scenario, context: &Context, rng: &mut ChaCha8Rng) -> Result<Response> {
        let (tokens, logprobs) = self.net.sample_turn(
            &context.features,
            self.temperature,
            self.codec.terminator(),
            RESPONSE_BUDGET,
            rng,
        )?;
        Ok(Response { tokens, logprobs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnRecord {
    /// 1-based.
    pub j: usize,
    pub prompt_tokens: Vec<TokenId>,
    pub context: Vec<f64>,
    pub response_tokens: Vec<TokenId>,
    pub response_logprobs: Vec<f64>,
    pub trajectory: Option<Trajectory>,
    /// `None` when the response did not parse.
    pub report: Option<MetricReport>,
    pub feedback: Feedback,
    pub p: f64,
    pub f: f64,
}

impl TurnRecord {
    /// Full composite including progress; 0 for unparsed turns.
    pub fn pdms(&self, cfg: &PdmConfig) -> f64 {
        self.report.as_ref().map_or(0.0, |r| pdm::compose_pdms(r, &cfg.weights))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub scenario_id: String,
    pub turns: Vec<TurnRecord>,
    pub terminated_clean: bool,
}

impl Rollout {
    pub fn last(&self) -> &TurnRecord {
        self.turns.last().expect("rollouts are never empty")
    }

    /// The turn whose trajectory stands after a budget of `b` turns.
    pub fn at_budget(&self, b: usize) -> &TurnRecord {
        &self.turns[b.clamp(1, self.turns.len()) - 1]
    }

    pub fn response_token_count(&self) -> usize {
        self.turns.iter().map(|t| t.response_tokens.len()).sum()
    }
}

/// 1 iff the tokens decode into a trajectory within the response budget.
pub fn format_score(tokens: &[TokenId], codec: &TokenCodec) -> f64 {
    if tokens.len() > RESPONSE_BUDGET {
        return 0.0;
    }
    match codec.decode(tokens) {
        Ok(_) => 1.0,
        Err(_) => 0.0,
    }
}

/// Trajectory, report, feedback, agent score and format score of one turn.
pub type Scored = (Option<Trajectory>, Option<MetricReport>, Feedback, f64, f64);

/// Scores one decoded (or failed) response.
pub fn score_response(tokens: &[TokenId], codec: &TokenCodec, scenario: &Scenario, cfg: &EnvConfig) -> Result<Scored> {
    let decoded = if tokens.len() > RESPONSE_BUDGET {
        None
    } else {
        codec.decode(tokens).ok()
    };
    match decoded {
        Some(traj) => {
            let report = pdm::evaluate(&traj, scenario, cfg.perception, &cfg.pdm)?;
            let p = pdm::agent_score_from_report(&report, &cfg.pdm);
            let feedback = pdm::extract_feedback(&report);
            Ok((Some(traj), Some(report), feedback, p, 1.0))
        }
        None => Ok((None, None, Feedback::format_failure(), 0.0, 0.0)),
    }
}

/// Runs one episode; deterministic in `(policy, scenario, cfg, seed)`.
pub fn run_episode<P: TurnPolicy + ?Sized>(
    policy: &P,
    scenario: &Scenario,
    cfg: &EnvConfig,
    seed: u64,
) -> Result<Rollout> {
    cfg.validate()?;
    let mut rng = stream(&[seed]);
    let mut history: Vec<HistoryTurn> = Vec::new();
    let mut turns = Vec::new();
    for j in 1..=cfg.max_turns {
        let ctx = encode_context(scenario, &history);
        let mut resp = policy.respond(scenario, &ctx, &mut rng)?;
        let truncated = resp.tokens.len() > RESPONSE_BUDGET;
        resp.tokens.truncate(RESPONSE_BUDGET);
        resp.logprobs.truncate(RESPONSE_BUDGET);
        let (trajectory, report, feedback, p, f) = if truncated {
            (None, None, Feedback::format_failure(), 0.0, 0.0)
        } else {
            score_response(&resp.tokens, policy.codec(), scenario, cfg)?
        };
        let clean = feedback.is_empty();
        history.push(HistoryTurn {
            response: resp.tokens.clone(),
            trajectory: trajectory.clone(),
            feedback: feedback.clone(),
        });
        turns.push(TurnRecord {
            j,
            prompt_tokens: ctx.prefix,
            context: ctx.features,
            response_tokens: resp.tokens,
            response_logprobs: resp.logprobs,
            trajectory,
            report,
            feedback,
            p,
            f,
        });
        if clean && cfg.stop_on_clean {
            break;
        }
    }
    let terminated_clean = turns.last().is_some_and(|t: &TurnRecord| t.feedback.is_empty());
    Ok(Rollout {
        scenario_id: scenario.id.clone(),
        turns,
        terminated_clean,
    })
}

#[derive(Serialize)]
struct DumpScores {
    nc: f64,
    dac: f64,
    ttc: f64,
    comfort: f64,
    ep: f64,
    pdms: f64,
    p: f64,
    f: f64,
}

#[derive(Serialize)]
struct DumpTurn {
    j: usize,
    traj: Option<Vec<[f64; 3]>>,
    scores: DumpScores,
    feedback_text: String,
}

#[derive(Serialize)]
struct DumpRollout<'a> {
    scenario_id: &'a str,
    terminated_clean: bool,
    turns: Vec<DumpTurn>,
}

pub fn rollout_json_line(r: &Rollout, cfg: &PdmConfig) -> String {
    let turns = r
        .turns
        .iter()
        .map(|t| {
            let rep = t.report.as_ref();
            let score = |g: fn(&MetricReport) -> f64| rep.map_or(0.0, g);
            DumpTurn {
                j: t.j,
                traj: t
                    .trajectory
                    .as_ref()
                    .map(|tr| tr.points().iter().map(|p| [p.x, p.y, p.heading]).collect()),
                scores: DumpScores {
                    nc: score(MetricReport::nc_score),
                    dac: score(MetricReport::dac_score),
                    ttc: score(MetricReport::ttc_score),
                    comfort: score(MetricReport::comfort_score),
                    ep: rep.map_or(0.0, |r| r.ep),
                    pdms: t.pdms(cfg),
                    p: t.p,
                    f: t.f,
                },
                feedback_text: t.feedback.text(),
            }
        })
        .collect();
    serde_json::to_string(&DumpRollout {
        scenario_id: &r.scenario_id,
        terminated_clean: r.terminated_clean,
        turns,
    })
    .expect("rollout dump serializes")
}

pub fn write_rollouts(path: impl AsRef<Path>, rollouts: &[Rollout], cfg: &PdmConfig) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in rollouts {
        out.extend_from_slice(rollout_json_line(r, cfg).as_bytes());
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Replays a fixed token sequence every turn.
pub struct FixedPolicy {
    pub codec: TokenCodec,
    pub tokens: Vec<TokenId>,
}

impl TurnPolicy for FixedPolicy {
    fn codec(&self) -> &TokenCodec {
        &self.codec
    }

    fn respond(&self, _: &Scenario, _: &Context, _: &mut ChaCha8Rng) -> Result<Response> {
        Ok(Response {
            tokens: self.tokens.clone(),
            logprobs: vec![0.0; self.tokens.len()],
        })
    }
}

/// Emits the encoded expert trajectory of whatever scenario it is given.
pub struct ExpertPolicy {
    pub codec: TokenCodec,
}

impl TurnPolicy for ExpertPolicy {
    fn codec(&self) -> &TokenCodec {
        &self.codec
    }

    fn respond(&self, scenario: &Scenario, _: &Context, _: &mut ChaCha8Rng) -> Result<Response> {
        let gt = scenario
            .gt_trajectory
            .as_ref()
            .ok_or_else(|| Error::data(format!("scenario {} has no expert trajectory", scenario.id)))?;
        let tokens = self.codec.encode(gt);
        Ok(Response {
            logprobs: vec![0.0; tokens.len()],
            tokens,
        })
    }
}

#[cfg(test)]
mod tests;
