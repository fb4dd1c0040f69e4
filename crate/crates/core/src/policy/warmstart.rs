//! Behavior-cloning warm start: token cross-entropy on encoded expert
//! trajectories, optimized with Adam.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{PolicyNet, TokenCodec, TokenId, TurnInput};
use crate::env::{encode_context, EnvConfig, HistoryTurn};
use crate::error::{Error, Result};
use crate::pdm;
use crate::rng::stream;
use crate::scenario::Scenario;

/// One supervised turn: context features and the target tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct BcExample {
    pub context: Vec<f64>,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("bc epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("bc learning_rate must be positive"));
        }
        Ok(())
    }
}

fn expert_tokens(s: &Scenario, codec: &TokenCodec) -> Result<Vec<TokenId>> {
    let gt = s
        .gt_trajectory
        .as_ref()
        .ok_or_else(|| Error::data(format!("scenario {} has no expert trajectory", s.id)))?;
    Ok(codec.encode(gt))
}

/// First-turn examples: empty history, expert target.
pub fn first_turn_examples(scenarios: &[Scenario], codec: &TokenCodec) -> Result<Vec<BcExample>> {
    scenarios
        .iter()
        .map(|s| {
            Ok(BcExample {
                context: encode_context(s, &[]).features,
                tokens: expert_tokens(s, codec)?,
            })
        })
        .collect()
}

/// Second-turn examples: a constant-velocity first attempt with its
/// feedback, expert target. Scenarios where the extrapolation is clean
/// contribute nothing.
pub fn constant_velocity_examples(
    scenarios: &[Scenario],
    codec: &TokenCodec,
    cfg: &EnvConfig,
) -> Result<Vec<BcExample>> {
    let mut out = Vec::new();
    for s in scenarios {
        let cv = s.constant_velocity_extrapolation()?;
        let tokens = codec.encode(&cv);
        let Ok(first) = codec.decode(&tokens) else {
            continue;
        };
        let report = pdm::evaluate(&first, s, cfg.perception, &cfg.pdm)?;
        let feedback = pdm::extract_feedback(&report);
        if feedback.is_empty() {
            continue;
        }
        let history = [HistoryTurn {
            response: tokens,
            trajectory: Some(first),
            feedback,
        }];
        out.push(BcExample {
            context: encode_context(s, &history).features,
            tokens: expert_tokens(s, codec)?,
        });
    }
    Ok(out)
}

/// Default warm-start data: first-turn plus constant-velocity refinement turns.
pub fn warm_start_examples(scenarios: &[Scenario], codec: &TokenCodec, cfg: &EnvConfig) -> Result<Vec<BcExample>> {
    let mut ex = first_turn_examples(scenarios, codec)?;
    ex.extend(constant_velocity_examples(scenarios, codec, cfg)?);
    Ok(ex)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Ascent step on `grad`.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p += lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

const CHUNK: usize = 8;

/// Mean log-likelihood per token over `batch` and its gradient.
fn batch_loglik(net: &PolicyNet, batch: &[&BcExample]) -> Result<(f64, usize, Vec<f64>)> {
    let parts: Vec<(f64, usize, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; net.num_params()];
            let mut value = 0.0;
            let mut tokens = 0;
            for ex in chunk {
                let turn = TurnInput {
                    context: &ex.context,
                    tokens: &ex.tokens,
                };
                value += net.accumulate_logprob_grad(&[turn], &[vec![1.0; ex.tokens.len()]], &mut grad)?;
                tokens += ex.tokens.len();
            }
            Ok((value, tokens, grad))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; net.num_params()];
    let (mut value, mut tokens) = (0.0, 0);
    for (v, n, g) in parts {
        value += v;
        tokens += n;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / tokens.max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((value * scale, tokens, grad))
}

/// Trains `net` in place; returns the mean per-token negative log-likelihood
/// of each epoch.
pub fn behavior_clone(net: &mut PolicyNet, examples: &[BcExample], cfg: &BcConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::config("behavior cloning needs at least one example"));
    }
    let mut adam = Adam::new(net.num_params());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<&BcExample> = examples.iter().collect();
        order.shuffle(&mut stream(&[cfg.seed, 0xBC, epoch as u64]));
        let (mut nll, mut count) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let (ll, tokens, grad) = batch_loglik(net, batch)?;
            adam.step(net.params_mut(), &grad, cfg.learning_rate);
            nll -= ll * tokens as f64;
            count += tokens;
        }
        history.push(nll / count as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::default_shape;
    use crate::scenario::generate_scenarios;

    #[test]
    fn cloning_reduces_nll_deterministically() {
        let codec = TokenCodec::default();
        let scenarios = generate_scenarios::<&str>(3, 12, &[]).unwrap();
        let ex = warm_start_examples(&scenarios, &codec, &EnvConfig::default()).unwrap();
        assert!(
            ex.len() > scenarios.len(),
            "conflict families should add refinement examples"
        );
        let cfg = BcConfig {
            epochs: 4,
            batch_size: 8,
            ..BcConfig::default()
        };
        let run = || {
            let mut net = PolicyNet::init(default_shape(&codec), 2);
            let h = behavior_clone(&mut net, &ex, &cfg).unwrap();
            (net, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a.params(), b.params());
        assert_eq!(ha, hb);
        assert!(ha.last().unwrap() < &ha[0]);
    }

    #[test]
    fn refinement_examples_carry_feedback() {
        let codec = TokenCodec::default();
        let scenarios = generate_scenarios(4, 6, &["lead_vehicle_brake"]).unwrap();
        let ex = constant_velocity_examples(&scenarios, &codec, &EnvConfig::default()).unwrap();
        assert_eq!(ex.len(), scenarios.len());
        for e in &ex {
            let fb = crate::env::feedback_slice(&e.context);
            assert_eq!(fb[0], 1.0);
            assert!(fb[2] + fb[4] > 0.0, "expected NC or TTC feedback");
        }
    }

    #[test]
    fn empty_example_set_is_rejected() {
        let codec = TokenCodec::default();
        let mut net = PolicyNet::init(default_shape(&codec), 2);
        assert!(behavior_clone(&mut net, &[], &BcConfig::default()).is_err());
    }
}
