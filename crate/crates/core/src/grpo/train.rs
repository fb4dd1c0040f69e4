//! Outer iterations refresh the reference policy; each step samples prompts,
//! rolls out a group per prompt against a frozen snapshot, scores turns,
//! normalizes advantages and runs mini-batch gradient ascent.

use std::fmt::Write;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use super::{compute_advantages, turn_reward, LossStats, PreparedRollout, TrainConfig};
use crate::env::{run_episode, EnvConfig, NetPolicy, Rollout};
use crate::error::{Error, Result};
use crate::policy::{PolicyNet, TokenCodec, TurnInput};
use crate::rng::{label_seed, mix_seed, stream};
use crate::scenario::Scenario;

const TAG_BATCH: u64 = 0xBA7C;
const TAG_EPISODE: u64 = 0xE915;
const TAG_SHUFFLE: u64 = 0x5F1E;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    /// Mean reward at each turn index over rollouts that reached it.
    pub mean_reward_turn: Vec<Option<f64>>,
    pub mean_pdms: f64,
    pub clip_frac: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub max_turns: usize,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn csv_header(max_turns: usize) -> String {
        let mut h = String::from("step");
        for j in 1..=max_turns {
            let _ = write!(h, ",mean_reward_turn_{j}");
        }
        h.push_str(",mean_pdms,clip_frac,kl,grad_norm,wall_ms");
        h
    }

    pub fn csv_row(row: &LogRow) -> String {
        let mut s = row.step.to_string();
        for r in &row.mean_reward_turn {
            s.push(',');
            if let Some(v) = r {
                let _ = write!(s, "{v}");
            }
        }
        let _ = write!(
            s,
            ",{},{},{},{},{}",
            row.mean_pdms, row.clip_frac, row.kl, row.grad_norm, row.wall_ms
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header(self.max_turns);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&Self::csv_row(r));
            out.push('\n');
        }
        out
    }
}

type StepHook<'a> = &'a mut dyn FnMut(&LogRow) -> Result<()>;
type IterationHook<'a> = &'a mut dyn FnMut(&PolicyNet, u64) -> Result<()>;

/// Optional callbacks: after every step, and after every outer iteration
/// (with the number of completed steps), e.g. for checkpoints.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub on_step: Option<StepHook<'a>>,
    pub on_iteration_end: Option<IterationHook<'a>>,
}

fn sample_prompts(corpus_len: usize, count: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut rng = stream(&[seed, TAG_BATCH, step]);
    let mut picks: Vec<usize> = index::sample(&mut rng, corpus_len, count.min(corpus_len)).into_vec();
    while picks.len() < count {
        picks.push(rng.gen_range(0..corpus_len));
    }
    picks
}

type TurnLogps = Vec<Vec<f64>>;

fn turn_logps(net: &PolicyNet, rollout: &Rollout) -> Result<TurnLogps> {
    rollout
        .turns
        .iter()
        .map(|t| {
            net.turn_logprobs(TurnInput {
                context: &t.context,
                tokens: &t.response_tokens,
            })
        })
        .collect()
}

fn add_scaled(params: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grad) {
        *p += lr * g;
    }
}

/// Runs steps `start_step + 1 ..= cfg.total_steps()`. `start_step` must sit
/// on an iteration boundary so the reference snapshot equals `net`.
pub fn train(
    net: &mut PolicyNet,
    codec: &TokenCodec,
    corpus: &[Scenario],
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    start_step: u64,
    hooks: &mut TrainHooks<'_>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::config("training corpus is empty"));
    }
    let m = cfg.steps_per_iteration as u64;
    if !start_step.is_multiple_of(m) {
        return Err(Error::config(format!(
            "resume step {start_step} is not on an iteration boundary (multiple of {m})"
        )));
    }
    let env_cfg = EnvConfig {
        max_turns: cfg.max_turns,
        ..env_cfg.clone()
    };
    env_cfg.validate()?;
    let mut log = TrainLog {
        max_turns: cfg.max_turns,
        rows: Vec::new(),
    };
    let total = cfg.total_steps() as u64;
    let mut reference = net.clone();
    for step in start_step..total {
        if step % m == 0 {
            reference = net.clone();
        }
        let started = cfg.record_wall_time.then(Instant::now);
        let old = net.clone();
        let prompts = sample_prompts(corpus.len(), cfg.prompts_per_step(), cfg.seed, step);
        let policy = NetPolicy {
            net: &old,
            codec,
            temperature: env_cfg.temperature,
        };
        let jobs: Vec<(usize, usize)> = prompts
            .iter()
            .enumerate()
            .flat_map(|(k, _)| (0..cfg.group_size).map(move |g| (k, g)))
            .collect();
        let rollouts: Vec<Rollout> = jobs
            .par_iter()
            .map(|&(k, g)| {
                let s = &corpus[prompts[k]];
                let seed = mix_seed(&[cfg.seed, TAG_EPISODE, step, label_seed(&s.id), k as u64, g as u64]);
                run_episode(&policy, s, &env_cfg, seed)
            })
            .collect::<Result<_>>()?;

        let mut advantages = Vec::with_capacity(rollouts.len());
        for group in rollouts.chunks(cfg.group_size) {
            advantages.extend(compute_advantages(group, cfg.mode, &cfg.reward)?.per_turn);
        }
        let logps: Vec<(TurnLogps, TurnLogps)> = rollouts
            .par_iter()
            .map(|r| Ok((turn_logps(&old, r)?, turn_logps(&reference, r)?)))
            .collect::<Result<_>>()?;
        let prepared: Vec<PreparedRollout<'_>> = rollouts
            .iter()
            .zip(advantages)
            .zip(logps)
            .map(|((rollout, adv), (old_logp, ref_logp))| PreparedRollout {
                rollout,
                advantages: adv,
                old_logp,
                ref_logp,
            })
            .collect();

        let mut stats_sum = LossStats::default();
        let mut grad_norm_sum = 0.0;
        let mut updates = 0usize;
        for epoch in 0..cfg.inner_epochs {
            let mut order: Vec<usize> = (0..prepared.len()).collect();
            order.shuffle(&mut stream(&[cfg.seed, TAG_SHUFFLE, step, epoch as u64]));
            for chunk in order.chunks(cfg.mini_batch) {
                let batch: Vec<PreparedRollout<'_>> = chunk.iter().map(|&i| prepared[i].clone()).collect();
                let (stats, grad) = super::objective_and_grad(net, &batch, cfg.clip_eps, cfg.beta)?;
                let mean_abs = grad.iter().map(|g| g.abs()).sum::<f64>() / grad.len() as f64;
                if !mean_abs.is_finite() || mean_abs > cfg.divergence_threshold {
                    return Err(Error::Divergence(format!(
                        "step {}: mean |grad| = {mean_abs:e} exceeds {:e}",
                        step + 1,
                        cfg.divergence_threshold
                    )));
                }
                let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                let param_norm = net.params().iter().map(|p| p * p).sum::<f64>().sqrt();
                let update = cfg.learning_rate * grad_norm;
                if update > cfg.max_update_ratio * param_norm.max(1.0) {
                    return Err(Error::Divergence(format!(
                        "step {}: update length {update:e} against parameter norm {param_norm:e}",
                        step + 1
                    )));
                }
                add_scaled(net.params_mut(), &grad, cfg.learning_rate);
                if net.params().iter().any(|p| !p.is_finite()) {
                    return Err(Error::Divergence(format!(
                        "step {}: parameters became non-finite",
                        step + 1
                    )));
                }
                grad_norm_sum += grad_norm;
                stats_sum.clip_frac += stats.clip_frac;
                stats_sum.kl += stats.kl;
                updates += 1;
            }
        }

        let mean_reward_turn = (1..=cfg.max_turns)
            .map(|j| {
                let vals: Vec<f64> = rollouts
                    .iter()
                    .filter_map(|r| r.turns.get(j - 1))
                    .map(|t| turn_reward(t.p, t.f, &cfg.reward, t.j))
                    .collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        let mean_pdms = rollouts.iter().map(|r| r.last().pdms(&env_cfg.pdm)).sum::<f64>() / rollouts.len() as f64;
        let row = LogRow {
            step: step + 1,
            mean_reward_turn,
            mean_pdms,
            clip_frac: stats_sum.clip_frac / updates as f64,
            kl: stats_sum.kl / updates as f64,
            grad_norm: grad_norm_sum / updates as f64,
            wall_ms: started.map_or(0, |t| t.elapsed().as_millis() as u64),
        };
        if let Some(h) = hooks.on_step.as_mut() {
            h(&row)?;
        }
        log.rows.push(row);
        if (step + 1) % m == 0 {
            if let Some(h) = hooks.on_iteration_end.as_mut() {
                h(net, step + 1)?;
            }
        }
    }
    Ok(log)
}
