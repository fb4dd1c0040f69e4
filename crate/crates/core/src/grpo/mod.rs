//! Group-relative policy optimization over multi-turn rollouts: per-turn
//! rewards, three advantage normalizations, the clipped surrogate with a K3
//! KL penalty, and the training loop.

mod objective;
mod train;

pub use objective::{objective_and_grad, LossStats, PreparedRollout};
pub use train::{train, LogRow, TrainHooks, TrainLog};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::Rollout;
use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub w_p: f64,
    pub w_f: f64,
    /// Optional multiplier per turn index (index 0 is turn 1).
    pub turn_weights: Option<Vec<f64>>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_p: 0.8,
            w_f: 0.2,
            turn_weights: None,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_p >= 0.0 && self.w_f >= 0.0) {
            return Err(Error::config("reward weights must be nonnegative"));
        }
        if let Some(w) = &self.turn_weights {
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::config("turn weights must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

/// `w_p · p + w_f · f`, times the turn weight when configured. `j` is 1-based.
pub fn turn_reward(p: f64, f: f64, cfg: &RewardConfig, j: usize) -> f64 {
    let base = cfg.w_p * p + cfg.w_f * f;
    match &cfg.turn_weights {
        Some(w) if !w.is_empty() => base * w[(j.max(1) - 1).min(w.len() - 1)],
        _ => base,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdvantageMode {
    /// Mean turn reward per rollout, normalized across the group.
    SeqGrpo,
    /// Each turn index normalized across the rollouts that reached it.
    PerTurn,
    /// Every (rollout, turn) reward normalized by one pooled mean/std.
    PooledGroup,
}

pub const ALL_MODES: [AdvantageMode; 3] = [
    AdvantageMode::SeqGrpo,
    AdvantageMode::PerTurn,
    AdvantageMode::PooledGroup,
];

impl AdvantageMode {
    pub fn name(self) -> &'static str {
        match self {
            AdvantageMode::SeqGrpo => "SEQ_GRPO",
            AdvantageMode::PerTurn => "PER_TURN",
            AdvantageMode::PooledGroup => "POOLED_GROUP",
        }
    }
}

impl fmt::Display for AdvantageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdvantageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "SEQ_GRPO" | "SEQ" => Ok(AdvantageMode::SeqGrpo),
            "PER_TURN" => Ok(AdvantageMode::PerTurn),
            "POOLED_GROUP" | "POOLED" => Ok(AdvantageMode::PooledGroup),
            _ => Err(Error::config(format!(
                "unknown advantage mode `{s}` (expected SEQ_GRPO, PER_TURN or POOLED_GROUP)"
            ))),
        }
    }
}

/// One advantage per (rollout, turn); every response token of that turn
/// shares it. Prompt and feedback tokens carry none.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub per_turn: Vec<Vec<f64>>,
}

impl AdvantageSet {
    /// Per-token advantages for rollout `i`, aligned with its response tokens.
    pub fn token_advantages(&self, i: usize, rollout: &Rollout) -> Vec<Vec<f64>> {
        rollout
            .turns
            .iter()
            .zip(&self.per_turn[i])
            .map(|(t, &a)| vec![a; t.response_tokens.len()])
            .collect()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn normalize(v: f64, mean: f64, std: f64) -> f64 {
    (v - mean) / std.max(STD_FLOOR)
}

/// Group-relative advantages from a group of rewards laid out as
/// `rewards[i][j]` (rollout `i`, 0-based turn `j`).
pub fn advantages_from_rewards(rewards: &[Vec<f64>], mode: AdvantageMode) -> Result<AdvantageSet> {
    if rewards.is_empty() {
        return Err(Error::config("advantage estimation needs a non-empty group"));
    }
    if rewards.len() < 2 {
        return Err(Error::config(
            "advantage estimation needs a group of at least 2 rollouts",
        ));
    }
    if rewards.iter().any(|r| r.is_empty()) {
        return Err(Error::data("every rollout needs at least one turn"));
    }
    let per_turn = match mode {
        AdvantageMode::SeqGrpo => {
            let seq: Vec<f64> = rewards.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
            let (m, s) = mean_std(&seq);
            rewards
                .iter()
                .zip(&seq)
                .map(|(r, &v)| vec![normalize(v, m, s); r.len()])
                .collect()
        }
        AdvantageMode::PerTurn => {
            let depth = rewards.iter().map(Vec::len).max().unwrap_or(0);
            let mut out: Vec<Vec<f64>> = rewards.iter().map(|r| vec![0.0; r.len()]).collect();
            for j in 0..depth {
                let members: Vec<usize> = (0..rewards.len()).filter(|&i| rewards[i].len() > j).collect();
                if members.len() < 2 {
                    continue;
                }
                let vals: Vec<f64> = members.iter().map(|&i| rewards[i][j]).collect();
                let (m, s) = mean_std(&vals);
                for &i in &members {
                    out[i][j] = normalize(rewards[i][j], m, s);
                }
            }
            out
        }
        AdvantageMode::PooledGroup => {
            let pooled: Vec<f64> = rewards.iter().flatten().copied().collect();
            let (m, s) = mean_std(&pooled);
            rewards
                .iter()
                .map(|r| r.iter().map(|&v| normalize(v, m, s)).collect())
                .collect()
        }
    };
    Ok(AdvantageSet { per_turn })
}

pub fn group_rewards(group: &[Rollout], cfg: &RewardConfig) -> Vec<Vec<f64>> {
    group
        .iter()
        .map(|r| r.turns.iter().map(|t| turn_reward(t.p, t.f, cfg, t.j)).collect())
        .collect()
}

/// Advantages for `G` rollouts of the same prompt.
pub fn compute_advantages(group: &[Rollout], mode: AdvantageMode, cfg: &RewardConfig) -> Result<AdvantageSet> {
    if let Some(first) = group.first() {
        if group.iter().any(|r| r.scenario_id != first.scenario_id) {
            return Err(Error::data("a group must share one scenario"));
        }
    }
    advantages_from_rewards(&group_rewards(group, cfg), mode)
}

/// Per-token K3 estimate `exp(Δ) − Δ − 1` with `Δ = ref − policy`.
pub fn k3_kl(logp_policy: &[f64], logp_ref: &[f64]) -> Result<Vec<f64>> {
    if logp_policy.len() != logp_ref.len() {
        return Err(Error::config(format!(
            "log-prob length mismatch: {} vs {}",
            logp_policy.len(),
            logp_ref.len()
        )));
    }
    Ok(logp_policy.iter().zip(logp_ref).map(|(lp, lr)| k3(lr - lp)).collect())
}

pub(crate) fn k3(delta: f64) -> f64 {
    delta.exp_m1() - delta
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub group_size: usize,
    /// Rollouts per step (prompts × group size).
    pub global_batch: usize,
    /// Rollouts per gradient update.
    pub mini_batch: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub clip_eps: f64,
    pub inner_epochs: usize,
    pub iterations: usize,
    pub steps_per_iteration: usize,
    pub max_turns: usize,
    pub mode: AdvantageMode,
    pub reward: RewardConfig,
    pub seed: u64,
    /// Abort when the mean absolute gradient entry exceeds this.
    pub divergence_threshold: f64,
    /// Abort when one update is longer than this multiple of the parameter
    /// norm (or of 1, whichever is larger).
    pub max_update_ratio: f64,
    /// Write real wall time into the log instead of 0.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            global_batch: 256,
            mini_batch: 128,
            learning_rate: 0.2,
            beta: 0.01,
            clip_eps: 0.2,
            inner_epochs: 1,
            iterations: 1,
            steps_per_iteration: 300,
            max_turns: 6,
            mode: AdvantageMode::PerTurn,
            reward: RewardConfig::default(),
            seed: 0,
            divergence_threshold: 1e3,
            max_update_ratio: 1.0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("group_size must be at least 2"));
        }
        if self.global_batch == 0 || !self.global_batch.is_multiple_of(self.group_size) {
            return Err(Error::config("global_batch must be a positive multiple of group_size"));
        }
        if self.mini_batch == 0 || !self.global_batch.is_multiple_of(self.mini_batch) {
            return Err(Error::config("mini_batch must divide global_batch"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.max_update_ratio > 0.0) {
            return Err(Error::config("max_update_ratio must be positive"));
        }
        if !(self.beta >= 0.0) || !(self.clip_eps > 0.0) {
            return Err(Error::config("beta must be >= 0 and clip_eps > 0"));
        }
        if self.inner_epochs == 0 || self.iterations == 0 || self.steps_per_iteration == 0 || self.max_turns == 0 {
            return Err(Error::config(
                "inner_epochs, iterations, steps_per_iteration and max_turns must be positive",
            ));
        }
        self.reward.validate()
    }

    pub fn total_steps(&self) -> usize {
        self.iterations * self.steps_per_iteration
    }

    pub fn prompts_per_step(&self) -> usize {
        self.global_batch / self.group_size
    }
}
