//! Clipped surrogate with a per-token K3 penalty, token-averaged per rollout
//! and averaged over rollouts, with its analytic gradient.

use rayon::prelude::*;

use super::k3;
use crate::env::Rollout;
use crate::error::{Error, Result};
use crate::policy::{PolicyNet, TurnInput};

/// A rollout with everything the objective needs besides the live policy.
#[derive(Debug, Clone)]
pub struct PreparedRollout<'a> {
    pub rollout: &'a Rollout,
    /// One advantage per turn.
    pub advantages: Vec<f64>,
    /// Per-turn, per-token log-probs under the sampling snapshot.
    pub old_logp: Vec<Vec<f64>>,
    /// Per-turn, per-token log-probs under the reference snapshot.
    pub ref_logp: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub objective: f64,
    /// Share of response tokens with `|ρ − 1| > ε`.
    pub clip_frac: f64,
    /// Mean per-token K3 estimate.
    pub kl: f64,
    pub tokens: usize,
}

/// Rollouts per parallel work unit; fixed so sums do not depend on threads.
const CHUNK: usize = 8;

fn check(p: &PreparedRollout<'_>) -> Result<()> {
    let turns = &p.rollout.turns;
    if p.advantages.len() != turns.len() || p.old_logp.len() != turns.len() || p.ref_logp.len() != turns.len() {
        return Err(Error::data(format!(
            "rollout {}: advantage/log-prob turn masks do not match its {} turns",
            p.rollout.scenario_id,
            turns.len()
        )));
    }
    for (t, (o, r)) in turns.iter().zip(p.old_logp.iter().zip(&p.ref_logp)) {
        if o.len() != t.response_tokens.len() || r.len() != t.response_tokens.len() {
            return Err(Error::data("log-prob mask does not match response tokens"));
        }
        if o.iter().chain(r).any(|x| x.is_nan()) {
            return Err(Error::data("NaN log-prob"));
        }
    }
    if p.advantages.iter().any(|a| a.is_nan()) {
        return Err(Error::data("NaN advantage"));
    }
    Ok(())
}

struct Partial {
    grad: Vec<f64>,
    objective: f64,
    clipped: usize,
    kl: f64,
    tokens: usize,
}

fn rollout_term(
    net: &PolicyNet,
    p: &PreparedRollout<'_>,
    scale: f64,
    clip_eps: f64,
    beta: f64,
    acc: &mut Partial,
) -> Result<()> {
    let n = p.rollout.response_token_count();
    if n == 0 {
        return Ok(());
    }
    let w = scale / n as f64;
    for (ti, turn) in p.rollout.turns.iter().enumerate() {
        let adv = p.advantages[ti];
        let old = &p.old_logp[ti];
        let reference = &p.ref_logp[ti];
        let mut obj = 0.0;
        let mut clipped = 0;
        let mut kl = 0.0;
        let logps = net.weighted_grad_with(
            TurnInput {
                context: &turn.context,
                tokens: &turn.response_tokens,
            },
            &mut acc.grad,
            |lp| {
                lp.iter()
                    .enumerate()
                    .map(|(t, &l)| {
                        let ratio = (l - old[t]).exp();
                        let clipped_ratio = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
                        let surr1 = ratio * adv;
                        let surr2 = clipped_ratio * adv;
                        let delta = reference[t] - l;
                        let k = k3(delta);
                        obj += surr1.min(surr2) - beta * k;
                        kl += k;
                        if (ratio - 1.0).abs() > clip_eps {
                            clipped += 1;
                        }
                        let surrogate_coef = if surr1 <= surr2 { ratio * adv } else { 0.0 };
                        // d k3 / d logp = 1 − exp(Δ)
                        w * (surrogate_coef - beta * (1.0 - delta.exp()))
                    })
                    .collect()
            },
        )?;
        if logps.iter().any(|x| !x.is_finite()) {
            return Err(Error::data("non-finite policy log-prob"));
        }
        acc.objective += w * obj;
        acc.clipped += clipped;
        acc.kl += kl;
        acc.tokens += turn.response_tokens.len();
    }
    Ok(())
}

/// Objective value, gradient and diagnostics over a mini-batch.
pub fn objective_and_grad(
    net: &PolicyNet,
    batch: &[PreparedRollout<'_>],
    clip_eps: f64,
    beta: f64,
) -> Result<(LossStats, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::config("empty mini-batch"));
    }
    for p in batch {
        check(p)?;
    }
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<Partial> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Partial {
                grad: vec![0.0; net.num_params()],
                objective: 0.0,
                clipped: 0,
                kl: 0.0,
                tokens: 0,
            };
            for p in chunk {
                rollout_term(net, p, scale, clip_eps, beta, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; net.num_params()];
    let mut stats = LossStats::default();
    let mut clipped = 0;
    let mut kl = 0.0;
    for part in partials {
        for (g, x) in grad.iter_mut().zip(&part.grad) {
            *g += x;
        }
        stats.objective += part.objective;
        clipped += part.clipped;
        kl += part.kl;
        stats.tokens += part.tokens;
    }
    if stats.tokens > 0 {
        stats.clip_frac = clipped as f64 / stats.tokens as f64;
        stats.kl = kl / stats.tokens as f64;
    }
    Ok((stats, grad))
}
