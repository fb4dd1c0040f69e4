//! Token-level trajectory policy: codec, network, checkpoints and the
//! behavior-cloning warm start.

mod checkpoint;
mod codec;
mod network;
pub mod warmstart;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use codec::{ParseFailure, TokenCodec, TokenId};
pub use network::{log_softmax, NetShape, PolicyNet, TurnInput};

use crate::scenario::HORIZON_STEPS;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EMBED: usize = 16;
/// Eight waypoints plus the terminator.
pub const RESPONSE_BUDGET: usize = HORIZON_STEPS + 1;

/// Network shape matching the environment's context features and `codec`.
pub fn default_shape(codec: &TokenCodec) -> NetShape {
    NetShape {
        context_dim: crate::env::CONTEXT_DIM,
        hidden: DEFAULT_HIDDEN,
        embed: DEFAULT_EMBED,
        vocab: codec.vocab_size(),
        positions: RESPONSE_BUDGET,
    }
}
