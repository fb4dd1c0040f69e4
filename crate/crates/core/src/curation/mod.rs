//! Training-data curation: multi-turn refinement samples (bootstrap,
//! constant-velocity, mock stacking), metric QA pairs and hard-sample
//! filtering for RL.

mod qa;

pub use qa::{gen_pdm_qa, qa_json_line, PdmQaSample, QaBox, QaMetric, QaQuery};

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{encode_context, run_episode, EnvConfig, HistoryTurn, TurnPolicy};
use crate::error::{Error, Result};
use crate::pdm;
use crate::policy::warmstart::BcExample;
use crate::policy::{TokenCodec, TokenId};
use crate::rng::{label_seed, mix_seed, stream};
use crate::scenario::Scenario;

/// Minimum full PDMS a target trajectory must reach.
pub const TARGET_MIN_PDMS: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Bootstrap,
    ConstVel,
    Mock,
}

/// Refinement history ending in non-empty feedback, plus the expert target.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTurnSample {
    pub scenario_id: String,
    pub history: Vec<HistoryTurn>,
    pub target: Vec<TokenId>,
    pub provenance: Provenance,
}

impl MultiTurnSample {
    /// Number of turns including the target turn.
    pub fn depth(&self) -> usize {
        self.history.len() + 1
    }

    pub fn to_example(&self, scenario: &Scenario) -> BcExample {
        BcExample {
            context: encode_context(scenario, &self.history).features,
            tokens: self.target.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleTurnRecord {
    response: Vec<TokenId>,
    feedback: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleRecord {
    scenario_id: String,
    provenance: Provenance,
    turns: Vec<SampleTurnRecord>,
    target: Vec<TokenId>,
}

pub fn sample_json_line(s: &MultiTurnSample) -> String {
    let rec = SampleRecord {
        scenario_id: s.scenario_id.clone(),
        provenance: s.provenance,
        turns: s
            .history
            .iter()
            .map(|h| SampleTurnRecord {
                response: h.response.clone(),
                feedback: h.feedback.text(),
            })
            .collect(),
        target: s.target.clone(),
    };
    serde_json::to_string(&rec).expect("sample records serialize")
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[MultiTurnSample]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in samples {
        out.push_str(&sample_json_line(s));
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Re-scores one response the way the environment would.
fn replay_turn(tokens: &[TokenId], scenario: &Scenario, codec: &TokenCodec, cfg: &EnvConfig) -> Result<HistoryTurn> {
    let (trajectory, _, feedback, _, _) = crate::env::score_response(tokens, codec, scenario, cfg)?;
    Ok(HistoryTurn {
        response: tokens.to_vec(),
        trajectory,
        feedback,
    })
}

/// Loads a sample file, rebuilding each history by re-scoring its responses
/// against `corpus`. Stored feedback text must match the re-scored text.
pub fn load_samples(
    path: impl AsRef<Path>,
    corpus: &[Scenario],
    codec: &TokenCodec,
    cfg: &EnvConfig,
) -> Result<Vec<MultiTurnSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |field: &str, message: String| Error::Line {
            path: path.to_path_buf(),
            line: i + 1,
            field: field.to_string(),
            message,
        };
        let mut de = serde_json::Deserializer::from_str(line);
        let rec: SampleRecord = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| line_err(&e.path().to_string(), e.inner().to_string()))?;
        let scenario = corpus
            .iter()
            .find(|s| s.id == rec.scenario_id)
            .ok_or_else(|| line_err("scenario_id", format!("unknown scenario `{}`", rec.scenario_id)))?;
        let mut history = Vec::with_capacity(rec.turns.len());
        for (j, t) in rec.turns.iter().enumerate() {
            let h = replay_turn(&t.response, scenario, codec, cfg)?;
            if h.feedback.text() != t.feedback {
                return Err(line_err(
                    &format!("turns[{j}].feedback"),
                    "stored feedback does not match re-scored feedback".into(),
                ));
            }
            history.push(h);
        }
        if codec.decode(&rec.target).is_err() {
            return Err(line_err("target", "target tokens do not decode".into()));
        }
        out.push(MultiTurnSample {
            scenario_id: rec.scenario_id,
            history,
            target: rec.target,
            provenance: rec.provenance,
        });
    }
    Ok(out)
}

/// Expert tokens for `s`, checked to score at least [`TARGET_MIN_PDMS`] with
/// empty feedback.
fn clean_target(s: &Scenario, codec: &TokenCodec, cfg: &EnvConfig) -> Result<Vec<TokenId>> {
    let gt = s
        .gt_trajectory
        .as_ref()
        .ok_or_else(|| Error::data(format!("scenario {} has no expert trajectory", s.id)))?;
    let tokens = codec.encode(gt);
    let traj = codec
        .decode(&tokens)
        .map_err(|e| Error::data(format!("scenario {}: expert does not encode: {e:?}", s.id)))?;
    let report = pdm::evaluate(&traj, s, cfg.perception, &cfg.pdm)?;
    if !pdm::extract_feedback(&report).is_empty() || pdm::compose_pdms(&report, &cfg.pdm.weights) < TARGET_MIN_PDMS {
        return Err(Error::data(format!(
            "scenario {}: expert trajectory is not a clean target",
            s.id
        )));
    }
    Ok(tokens)
}

fn sorted(mut v: Vec<MultiTurnSample>) -> Vec<MultiTurnSample> {
    v.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    v
}

/// Runs `policy` for up to `k` turns per scenario (stopping early on clean
/// feedback); scenarios still receiving feedback after turn `k` become
/// samples of depth `k + 1`.
pub fn bootstrap_round<P: TurnPolicy + ?Sized>(
    policy: &P,
    corpus: &[Scenario],
    k: usize,
    env_cfg: &EnvConfig,
    seed: u64,
) -> Result<Vec<MultiTurnSample>> {
    if k == 0 {
        return Err(Error::config("bootstrap depth k must be at least 1"));
    }
    let cfg = EnvConfig {
        max_turns: k,
        stop_on_clean: true,
        ..env_cfg.clone()
    };
    let out: Vec<Option<MultiTurnSample>> = corpus
        .par_iter()
        .map(|s| {
            let r = run_episode(policy, s, &cfg, mix_seed(&[seed, label_seed(&s.id)]))?;
            if r.last().feedback.is_empty() {
                return Ok(None);
            }
            Ok(Some(MultiTurnSample {
                scenario_id: s.id.clone(),
                history: r
                    .turns
                    .into_iter()
                    .map(|t| HistoryTurn {
                        response: t.response_tokens,
                        trajectory: t.trajectory,
                        feedback: t.feedback,
                    })
                    .collect(),
                target: clean_target(s, policy.codec(), env_cfg)?,
                provenance: Provenance::Bootstrap,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(sorted(out.into_iter().flatten().collect()))
}

/// First turn = constant-velocity extrapolation of the ego history; unclean
/// results become two-turn samples.
pub fn const_velocity_round(
    corpus: &[Scenario],
    codec: &TokenCodec,
    env_cfg: &EnvConfig,
) -> Result<Vec<MultiTurnSample>> {
    let mut out = Vec::new();
    for s in corpus {
        let cv = s.constant_velocity_extrapolation()?;
        let first = replay_turn(&codec.encode(&cv), s, codec, env_cfg)?;
        if first.feedback.is_empty() {
            continue;
        }
        out.push(MultiTurnSample {
            scenario_id: s.id.clone(),
            history: vec![first],
            target: clean_target(s, codec, env_cfg)?,
            provenance: Provenance::ConstVel,
        });
    }
    Ok(sorted(out))
}

/// Length of the shallow sequences stacked by [`mock_multiturn`].
pub const MOCK_SEQUENCE_TURNS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MockConfig {
    /// Turns per stacked sample, target included; must exceed 3.
    pub depth: usize,
    /// Independent shallow sequences sampled per scenario.
    pub runs: usize,
    /// Share of the stacked samples kept.
    pub keep_fraction: f64,
    pub seed: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            depth: 6,
            runs: 2,
            keep_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Stacks independently sampled three-turn sequences of the same scenario
/// into deeper histories. Only distinct sequences are stacked, so a scenario
/// without enough of them yields nothing. The result is down-sampled to
/// `keep_fraction` of the stacked samples.
pub fn mock_multiturn<P: TurnPolicy + ?Sized>(
    policy: &P,
    corpus: &[Scenario],
    env_cfg: &EnvConfig,
    cfg: &MockConfig,
) -> Result<Vec<MultiTurnSample>> {
    if cfg.depth <= MOCK_SEQUENCE_TURNS {
        return Err(Error::config(format!("mock depth must exceed {MOCK_SEQUENCE_TURNS}")));
    }
    if !(0.0..=1.0).contains(&cfg.keep_fraction) {
        return Err(Error::config("keep_fraction must lie in [0, 1]"));
    }
    let run_cfg = EnvConfig {
        max_turns: MOCK_SEQUENCE_TURNS,
        stop_on_clean: false,
        ..env_cfg.clone()
    };
    let need = cfg.depth - 1;
    let stacked: Vec<Option<MultiTurnSample>> = corpus
        .par_iter()
        .map(|s| {
            let mut seqs: Vec<Vec<HistoryTurn>> = Vec::new();
            for run in 0..cfg.runs {
                let r = run_episode(
                    policy,
                    s,
                    &run_cfg,
                    mix_seed(&[cfg.seed, label_seed(&s.id), run as u64]),
                )?;
                let seq: Vec<HistoryTurn> = r
                    .turns
                    .into_iter()
                    .map(|t| HistoryTurn {
                        response: t.response_tokens,
                        trajectory: t.trajectory,
                        feedback: t.feedback,
                    })
                    .collect();
                if !seqs.contains(&seq) {
                    seqs.push(seq);
                }
            }
            let history: Vec<HistoryTurn> = seqs.into_iter().flatten().take(need).collect();
            if history.len() < need || history.last().is_none_or(|h| h.feedback.is_empty()) {
                return Ok(None);
            }
            Ok(Some(MultiTurnSample {
                scenario_id: s.id.clone(),
                history,
                target: clean_target(s, policy.codec(), env_cfg)?,
                provenance: Provenance::Mock,
            }))
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<MultiTurnSample> = stacked.into_iter().flatten().collect();
    let keep = (cfg.keep_fraction * all.len() as f64).round() as usize;
    all.shuffle(&mut stream(&[cfg.seed, 0x30C4]));
    all.truncate(keep);
    Ok(sorted(all))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RlCategory {
    /// First-turn feedback was non-empty.
    TwoTurn,
    /// Clean first turn with agent score below the threshold.
    LowScore,
    Other,
}

impl RlCategory {
    pub fn name(self) -> &'static str {
        match self {
            RlCategory::TwoTurn => "TWO_TURN",
            RlCategory::LowScore => "LOW_SCORE",
            RlCategory::Other => "OTHER",
        }
    }
}

impl fmt::Display for RlCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RlCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TWO_TURN" => Ok(RlCategory::TwoTurn),
            "LOW_SCORE" => Ok(RlCategory::LowScore),
            "OTHER" => Ok(RlCategory::Other),
            _ => Err(Error::config(format!("unknown RL data category `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RlDataEntry {
    pub scenario_id: String,
    pub category: RlCategory,
    pub first_turn_score: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterConfig {
    pub threshold: f64,
    pub other_fraction: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold: 0.8,
            other_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Sorted by scenario id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RlDataSplit {
    pub threshold: f64,
    pub other_fraction: f64,
    pub entries: Vec<RlDataEntry>,
}

impl RlDataSplit {
    pub fn count(&self, c: RlCategory) -> usize {
        self.entries.iter().filter(|e| e.category == c).count()
    }

    pub fn selected_ids(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.selected)
            .map(|e| e.scenario_id.as_str())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario_id,category,first_turn_score,selected\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.scenario_id, e.category, e.first_turn_score, e.selected
            ));
        }
        out
    }
}

/// One inference pass per scenario, then TWO_TURN > LOW_SCORE > OTHER.
/// All TWO_TURN and LOW_SCORE scenarios are selected, plus a seeded
/// `other_fraction` of OTHER.
pub fn filter_rl_data<P: TurnPolicy + ?Sized>(
    policy: &P,
    corpus: &[Scenario],
    env_cfg: &EnvConfig,
    cfg: &FilterConfig,
) -> Result<RlDataSplit> {
    if !(0.0..=1.0).contains(&cfg.other_fraction) {
        return Err(Error::config("other_fraction must lie in [0, 1]"));
    }
    let one = EnvConfig {
        max_turns: 1,
        ..env_cfg.clone()
    };
    let mut entries: Vec<RlDataEntry> = corpus
        .par_iter()
        .map(|s| {
            let r = run_episode(policy, s, &one, mix_seed(&[cfg.seed, label_seed(&s.id)]))?;
            let t = r.last();
            let category = if !t.feedback.is_empty() {
                RlCategory::TwoTurn
            } else if t.p < cfg.threshold {
                RlCategory::LowScore
            } else {
                RlCategory::Other
            };
            Ok(RlDataEntry {
                scenario_id: s.id.clone(),
                category,
                first_turn_score: t.p,
                selected: category != RlCategory::Other,
            })
        })
        .collect::<Result<_>>()?;
    entries.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    let mut others: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].category == RlCategory::Other)
        .collect();
    let keep = (cfg.other_fraction * others.len() as f64).round() as usize;
    others.shuffle(&mut stream(&[cfg.seed, 0x0743]));
    for &i in &others[..keep] {
        entries[i].selected = true;
    }
    Ok(RlDataSplit {
        threshold: cfg.threshold,
        other_fraction: cfg.other_fraction,
        entries,
    })
}

/// Selected scenarios of `split`, in corpus order.
pub fn select_corpus(corpus: &[Scenario], split: &RlDataSplit) -> Vec<Scenario> {
    let ids: std::collections::HashSet<&str> = split.selected_ids().into_iter().collect();
    corpus.iter().filter(|s| ids.contains(s.id.as_str())).cloned().collect()
}

#[cfg(test)]
mod tests;
