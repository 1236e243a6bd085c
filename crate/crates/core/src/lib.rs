//! Persona-robust neural re-ranking: query rewriting through an LLM backend,
//! a multi-expert ranking head, a divergence-regularized training loss, and
//! ranking-stability metrics.

pub mod data;
pub mod loss;
pub mod ranker;
pub mod metrics;
pub mod rewrite;
pub mod harness;
