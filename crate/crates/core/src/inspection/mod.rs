//! Attention roll-out with token-type block analysis, and integrated
//! gradients with per-patch variable attribution.

mod attribution;
mod rollout;

pub use attribution::{
    integrated_gradients, most_important_variable, Attributable, AttributionMap, LinearSurrogate,
};
pub use rollout::{
    last_layer_attention, partition_blocks, reassemble_blocks, rollout, token_type_stats,
    AttentionBlocks, Moments, RolloutMatrix, TokenTypeStats,
};
