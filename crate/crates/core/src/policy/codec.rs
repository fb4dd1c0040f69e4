//! Discrete waypoint vocabulary. Each waypoint token pairs a longitudinal step
//! bin with an absolute lateral offset bin; the terminator closes a response.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::scenario::{Trajectory, HORIZON_STEPS};

pub type TokenId = u32;

/// Why a response did not decode.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("expected {HORIZON_STEPS} waypoint tokens, got {0}")]
    WrongCount(usize),
    #[error("token id {0} is outside the vocabulary")]
    OutOfVocabulary(TokenId),
    #[error("tokens follow the terminator")]
    TrailingTokens,
    #[error("decoded trajectory is invalid")]
    InvalidTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCodec {
    /// Absolute lateral offsets, meters.
    pub lateral_bins: Vec<f64>,
    /// Forward step lengths per waypoint, meters.
    pub step_bins: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl Default for TokenCodec {
    fn default() -> Self {
        Self::uniform(9, -3.0, 3.0, 9, 0.0, 6.0)
    }
}

fn nearest(bins: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (i, b) in bins.iter().enumerate() {
        if (b - v).abs() < (bins[best] - v).abs() {
            best = i;
        }
    }
    best
}

impl TokenCodec {
    pub fn uniform(l: usize, lat_lo: f64, lat_hi: f64, m: usize, step_lo: f64, step_hi: f64) -> Self {
        Self {
            lateral_bins: linspace(lat_lo, lat_hi, l),
            step_bins: linspace(step_lo, step_hi, m),
        }
    }

    pub fn n_lateral(&self) -> usize {
        self.lateral_bins.len()
    }

    pub fn n_steps(&self) -> usize {
        self.step_bins.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.n_lateral() * self.n_steps() + 1
    }

    pub fn terminator(&self) -> TokenId {
        (self.n_lateral() * self.n_steps()) as TokenId
    }

    pub fn token(&self, step_bin: usize, lateral_bin: usize) -> TokenId {
        (step_bin * self.n_lateral() + lateral_bin) as TokenId
    }

    /// `(step, lateral)` of a waypoint token.
    pub fn split(&self, token: TokenId) -> Option<(f64, f64)> {
        if token >= self.terminator() {
            return None;
        }
        let t = token as usize;
        Some((
            self.step_bins[t / self.n_lateral()],
            self.lateral_bins[t % self.n_lateral()],
        ))
    }

    /// Largest half bin width across both axes.
    pub fn half_bin(&self) -> (f64, f64) {
        let half = |b: &[f64]| b.windows(2).map(|w| (w[1] - w[0]).abs() / 2.0).fold(0.0f64, f64::max);
        (half(&self.step_bins), half(&self.lateral_bins))
    }

    /// Eight waypoint tokens plus the terminator. Steps are measured from the
    /// previously decoded point so rounding error does not accumulate.
    pub fn encode(&self, traj: &Trajectory) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(HORIZON_STEPS + 1);
        let mut x = 0.0;
        for p in traj.points() {
            let s = nearest(&self.step_bins, p.x - x);
            let l = nearest(&self.lateral_bins, p.y);
            x += self.step_bins[s];
            out.push(self.token(s, l));
        }
        out.push(self.terminator());
        out
    }

    pub fn decode(&self, tokens: &[TokenId]) -> Result<Trajectory, ParseFailure> {
        let end = tokens
            .iter()
            .position(|&t| t == self.terminator())
            .unwrap_or(tokens.len());
        if end + 1 < tokens.len() {
            return Err(ParseFailure::TrailingTokens);
        }
        let body = &tokens[..end];
        if let Some(&bad) = body.iter().find(|&&t| t > self.terminator()) {
            return Err(ParseFailure::OutOfVocabulary(bad));
        }
        if body.len() != HORIZON_STEPS {
            return Err(ParseFailure::WrongCount(body.len()));
        }
        let mut x = 0.0;
        let positions: Vec<Vec2> = body
            .iter()
            .map(|&t| {
                let (step, lat) = self.split(t).expect("checked above");
                x += step;
                Vec2::new(x, lat)
            })
            .collect();
        Trajectory::from_positions(&positions).map_err(|_| ParseFailure::InvalidTrajectory)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vocabulary() {
        let c = TokenCodec::default();
        assert_eq!(c.vocab_size(), 82);
        assert_eq!(c.terminator(), 81);
        assert_eq!(c.half_bin(), (0.375, 0.375));
    }

    #[test]
    fn straight_three_meter_steps() {
        let c = TokenCodec::default();
        let tok = c.token(4, 4);
        assert_eq!(c.split(tok), Some((3.0, 0.0)));
        let t = c.decode(&[tok; 8]).unwrap();
        assert_eq!(t.endpoint().x, 24.0);
        assert!(t.points().iter().all(|p| p.y == 0.0 && p.heading == 0.0));
        let mut with_term = vec![tok; 8];
        with_term.push(c.terminator());
        assert_eq!(c.decode(&with_term).unwrap(), t);
    }

    #[test]
    fn malformed_responses() {
        let c = TokenCodec::default();
        let tok = c.token(4, 4);
        assert_eq!(c.decode(&[tok; 9]), Err(ParseFailure::WrongCount(9)));
        assert_eq!(c.decode(&[tok; 7]), Err(ParseFailure::WrongCount(7)));
        let mut bad = vec![tok; 8];
        bad[3] = 500;
        assert_eq!(c.decode(&bad), Err(ParseFailure::OutOfVocabulary(500)));
        let mut early = vec![tok; 9];
        early[2] = c.terminator();
        assert_eq!(c.decode(&early), Err(ParseFailure::TrailingTokens));
    }
}
