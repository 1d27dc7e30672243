//! Reasoning-circuit block prediction from residual-stream statistics, and GGUF
//! layer-duplication surgery for validating the predictions.
//!
//! Pipeline: a CPTR activation trace ([`trace`]) is reduced to per-layer statistics
//! ([`stats`]), which score every candidate layer block ([`scoring`]). The chosen block
//! can then be duplicated inside a GGUF model file ([`gguf`]).

pub mod gguf;
pub mod scoring;
pub mod stats;
pub mod svd;
pub mod trace;

pub use scoring::{
    combined_rank, enumerate_blocks, CandidateBlock, CircuitType, RankConfig, RankedReport, ScoredBlock,
};
pub use stats::{compute_all, read_stats, write_stats, LayerStatsTable};
pub use trace::{read_trace, write_trace, Position, TraceMeta, TraceSet};
