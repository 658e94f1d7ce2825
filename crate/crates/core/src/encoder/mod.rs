//! Dialogue tokenization, the pooled and adaptive views, and the gate that
//! aggregates them.

pub mod diagnostics;
pub mod sample;
pub mod views;
pub mod vocab;

pub use diagnostics::{AlphaRecord, AlphaTable, BetaTable};
pub use sample::{normalize, DialogueSample, Speaker, Turn};
pub use views::{
    adaptive_field, adaptive_field_graph, adaptive_field_with_weights, adaptive_weights_graph,
    aggregate_graph, aggregate_views, aggregate_with_gate, build_views, global_pool,
    global_pool_graph, mean_aggregate_graph, tokenize_and_embed, AdaptiveFieldParams,
    AggregationGateParams, TokenEmbeddingSequence, ViewPair,
};
pub use vocab::{EncodedSequence, Vocabulary, PAD, SEP, UNK};
