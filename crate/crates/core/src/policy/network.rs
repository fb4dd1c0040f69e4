//! Two-layer tanh network over `context ⊕ Σ emb(emitted) ⊕ onehot(position)`
//! with hand-written backprop into a flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::TokenId;
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub context_dim: usize,
    pub hidden: usize,
    pub embed: usize,
    pub vocab: usize,
    /// Maximum tokens per response (one-hot position width).
    pub positions: usize,
}

impl NetShape {
    pub fn input_dim(&self) -> usize {
        self.context_dim + self.embed + self.positions
    }

    pub fn num_params(&self) -> usize {
        let l = self.layout();
        l.emb + self.vocab * self.embed
    }

    fn layout(&self) -> Layout {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.input_dim();
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.vocab * self.hidden;
        let emb = b2 + self.vocab;
        Layout { w1, b1, w2, b2, emb }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    emb: usize,
}

/// One response turn: its context features and emitted tokens.
#[derive(Debug, Clone, Copy)]
pub struct TurnInput<'a> {
    pub context: &'a [f64],
    pub tokens: &'a [TokenId],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    shape: NetShape,
    layout_cache: [usize; 5],
    params: Vec<f64>,
}

/// Cached activations of one turn.
struct TurnForward {
    hidden: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    emb_sums: Vec<Vec<f64>>,
    logps: Vec<f64>,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl PolicyNet {
    pub fn zeros(shape: NetShape) -> Self {
        let l = shape.layout();
        Self {
            shape,
            layout_cache: [l.w1, l.b1, l.w2, l.b2, l.emb],
            params: vec![0.0; shape.num_params()],
        }
    }

    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init(shape: NetShape, seed: u64) -> Self {
        let mut net = Self::zeros(shape);
        let mut rng = stream(&[seed, 0x1417]);
        let l = shape.layout();
        let a1 = 1.0 / (shape.input_dim() as f64).sqrt();
        let a2 = 1.0 / (shape.hidden as f64).sqrt();
        let ae = 1.0 / (shape.embed.max(1) as f64).sqrt();
        for (i, p) in net.params.iter_mut().enumerate() {
            *p = if i < l.b1 {
                rng.gen_range(-a1..a1)
            } else if (l.w2..l.b2).contains(&i) {
                rng.gen_range(-a2..a2)
            } else if i >= l.emb {
                rng.gen_range(-ae..ae)
            } else {
                0.0
            };
        }
        net
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.num_params() {
            return Err(Error::codec(format!(
                "parameter count {} does not match shape ({} expected)",
                params.len(),
                shape.num_params()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::codec("non-finite parameter"));
        }
        let mut net = Self::zeros(shape);
        net.params = params;
        Ok(net)
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> Layout {
        let [w1, b1, w2, b2, emb] = self.layout_cache;
        Layout { w1, b1, w2, b2, emb }
    }

    fn check_context(&self, context: &[f64]) -> Result<()> {
        if context.len() != self.shape.context_dim {
            return Err(Error::config(format!(
                "context has {} features, network expects {}",
                context.len(),
                self.shape.context_dim
            )));
        }
        Ok(())
    }

    /// `b1 + W1[:, ctx] · context`, shared by every position of a turn.
    fn context_projection(&self, context: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let d = self.shape.input_dim();
        (0..self.shape.hidden)
            .map(|j| {
                let row = &self.params[l.w1 + j * d..l.w1 + j * d + self.shape.context_dim];
                self.params[l.b1 + j] + row.iter().zip(context).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    fn step(&self, base: &[f64], emb_sum: &[f64], position: usize) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout();
        let s = self.shape;
        let d = s.input_dim();
        let pos = position.min(s.positions - 1);
        let h: Vec<f64> = (0..s.hidden)
            .map(|j| {
                let row = l.w1 + j * d + s.context_dim;
                let mut z = base[j] + self.params[row + s.embed + pos];
                for (e, v) in emb_sum.iter().enumerate() {
                    z += self.params[row + e] * v;
                }
                z.tanh()
            })
            .collect();
        let logits = (0..s.vocab)
            .map(|v| {
                let row = &self.params[l.w2 + v * s.hidden..l.w2 + (v + 1) * s.hidden];
                self.params[l.b2 + v] + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        (h, logits)
    }

    fn add_embedding(&self, emb_sum: &mut [f64], token: TokenId) {
        let l = self.layout();
        let start = l.emb + token as usize * self.shape.embed;
        for (e, v) in emb_sum.iter_mut().enumerate() {
            *v += self.params[start + e];
        }
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.shape.vocab) {
            return Err(Error::data(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }

    pub fn logits(&self, context: &[f64], emitted: &[TokenId]) -> Result<Vec<f64>> {
        self.check_context(context)?;
        self.check_tokens(emitted)?;
        let base = self.context_projection(context);
        let mut emb_sum = vec![0.0; self.shape.embed];
        for &t in emitted {
            self.add_embedding(&mut emb_sum, t);
        }
        Ok(self.step(&base, &emb_sum, emitted.len()).1)
    }

    fn forward_turn(&self, context: &[f64], tokens: &[TokenId]) -> TurnForward {
        let base = self.context_projection(context);
        let mut emb_sum = vec![0.0; self.shape.embed];
        let mut fwd = TurnForward {
            hidden: Vec::with_capacity(tokens.len()),
            probs: Vec::with_capacity(tokens.len()),
            emb_sums: Vec::with_capacity(tokens.len()),
            logps: Vec::with_capacity(tokens.len()),
        };
        for (t, &tok) in tokens.iter().enumerate() {
            let (h, logits) = self.step(&base, &emb_sum, t);
            let lp = log_softmax(&logits);
            fwd.logps.push(lp[tok as usize]);
            fwd.probs.push(lp.iter().map(|x| x.exp()).collect());
            fwd.hidden.push(h);
            fwd.emb_sums.push(emb_sum.clone());
            self.add_embedding(&mut emb_sum, tok);
        }
        fwd
    }

    /// Per-token log-probabilities of a turn's tokens.
    pub fn turn_logprobs(&self, turn: TurnInput<'_>) -> Result<Vec<f64>> {
        self.check_context(turn.context)?;
        self.check_tokens(turn.tokens)?;
        Ok(self.forward_turn(turn.context, turn.tokens).logps)
    }

    fn backward_turn(&self, turn: TurnInput<'_>, fwd: &TurnForward, weights: &[f64], grad: &mut [f64]) {
        let l = self.layout();
        let s = self.shape;
        let d = s.input_dim();
        let n = turn.tokens.len();
        let mut dz_total = vec![0.0; s.hidden];
        let mut demb_at = vec![vec![0.0; s.embed]; n];
        for t in 0..n {
            let w = weights[t];
            if w == 0.0 {
                continue;
            }
            let tok = turn.tokens[t] as usize;
            let h = &fwd.hidden[t];
            let mut dh = vec![0.0; s.hidden];
            for v in 0..s.vocab {
                let indicator = if v == tok { 1.0 } else { 0.0 };
                let dl = w * (indicator - fwd.probs[t][v]);
                if dl == 0.0 {
                    continue;
                }
                grad[l.b2 + v] += dl;
                let row = l.w2 + v * s.hidden;
                for j in 0..s.hidden {
                    grad[row + j] += dl * h[j];
                    dh[j] += self.params[row + j] * dl;
                }
            }
            let pos = t.min(s.positions - 1);
            for j in 0..s.hidden {
                let dz = dh[j] * (1.0 - h[j] * h[j]);
                dz_total[j] += dz;
                let row = l.w1 + j * d + s.context_dim;
                for e in 0..s.embed {
                    grad[row + e] += dz * fwd.emb_sums[t][e];
                    demb_at[t][e] += self.params[row + e] * dz;
                }
                grad[row + s.embed + pos] += dz;
            }
        }
        for j in 0..s.hidden {
            grad[l.b1 + j] += dz_total[j];
            let row = l.w1 + j * d;
            for (c, x) in turn.context.iter().enumerate() {
                grad[row + c] += dz_total[j] * x;
            }
        }
        // token s feeds every later position's embedding sum
        let mut suffix = vec![0.0; s.embed];
        for t in (0..n).rev() {
            if t + 1 < n {
                let tok = turn.tokens[t] as usize;
                for e in 0..s.embed {
                    grad[l.emb + tok * s.embed + e] += suffix[e];
                }
            }
            for e in 0..s.embed {
                suffix[e] += demb_at[t][e];
            }
        }
    }

    /// `Σ_t w_t log π(token_t | ·)` over several turns and its gradient.
    pub fn logprob_and_grad(&self, turns: &[TurnInput<'_>], weights: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.num_params()];
        let value = self.accumulate_logprob_grad(turns, weights, &mut grad)?;
        Ok((value, grad))
    }

    /// Like [`PolicyNet::logprob_and_grad`] but adds into an existing buffer.
    pub fn accumulate_logprob_grad(
        &self,
        turns: &[TurnInput<'_>],
        weights: &[Vec<f64>],
        grad: &mut [f64],
    ) -> Result<f64> {
        if turns.len() != weights.len() {
            return Err(Error::config(format!(
                "{} turns but {} weight vectors",
                turns.len(),
                weights.len()
            )));
        }
        let mut value = 0.0;
        for (turn, w) in turns.iter().zip(weights) {
            if turn.tokens.len() != w.len() {
                return Err(Error::config(format!(
                    "{} tokens but {} token weights",
                    turn.tokens.len(),
                    w.len()
                )));
            }
            self.check_context(turn.context)?;
            self.check_tokens(turn.tokens)?;
            let fwd = self.forward_turn(turn.context, turn.tokens);
            value += fwd.logps.iter().zip(w).map(|(lp, wt)| lp * wt).sum::<f64>();
            self.backward_turn(*turn, &fwd, w, grad);
        }
        Ok(value)
    }

    /// Gradient for caller-chosen per-token weights computed from the forward
    /// log-probs, e.g. clipped-surrogate coefficients.
    pub fn weighted_grad_with<F>(
        &self,
        turn: TurnInput<'_>,
        grad: &mut [f64],
        weights_from_logps: F,
    ) -> Result<Vec<f64>>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        self.check_context(turn.context)?;
        self.check_tokens(turn.tokens)?;
        let fwd = self.forward_turn(turn.context, turn.tokens);
        let w = weights_from_logps(&fwd.logps);
        if w.len() != turn.tokens.len() {
            return Err(Error::config("token weight length mismatch"));
        }
        self.backward_turn(turn, &fwd, &w, grad);
        Ok(fwd.logps)
    }

    /// Autoregressive sampling until the terminator or `max_tokens`. Returns
    /// the tokens and their log-probabilities under the tempered distribution.
    pub fn sample_turn<R: Rng>(
        &self,
        context: &[f64],
        temperature: f64,
        terminator: TokenId,
        max_tokens: usize,
        rng: &mut R,
    ) -> Result<(Vec<TokenId>, Vec<f64>)> {
        if !(temperature > 0.0) {
            return Err(Error::config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        self.check_context(context)?;
        let base = self.context_projection(context);
        let mut emb_sum = vec![0.0; self.shape.embed];
        let mut tokens = Vec::with_capacity(max_tokens);
        let mut logps = Vec::with_capacity(max_tokens);
        for t in 0..max_tokens {
            let (_, logits) = self.step(&base, &emb_sum, t);
            let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
            let lp = log_softmax(&scaled);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = lp.len() - 1;
            for (v, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = v;
                    break;
                }
            }
            tokens.push(pick as TokenId);
            logps.push(lp[pick]);
            if pick as TokenId == terminator {
                break;
            }
            self.add_embedding(&mut emb_sum, pick as TokenId);
        }
        Ok((tokens, logps))
    }

    /// Argmax decoding (lowest id wins ties).
    pub fn greedy_turn(&self, context: &[f64], terminator: TokenId, max_tokens: usize) -> Result<Vec<TokenId>> {
        self.check_context(context)?;
        let base = self.context_projection(context);
        let mut emb_sum = vec![0.0; self.shape.embed];
        let mut tokens = Vec::with_capacity(max_tokens);
        for t in 0..max_tokens {
            let (_, logits) = self.step(&base, &emb_sum, t);
            let mut best = 0;
            for (v, z) in logits.iter().enumerate() {
                if *z > logits[best] {
                    best = v;
                }
            }
            tokens.push(best as TokenId);
            if best as TokenId == terminator {
                break;
            }
            self.add_embedding(&mut emb_sum, best as TokenId);
        }
        Ok(tokens)
    }
}
