//! Keyword-pyramid guided retrieval over long-term conversational memory.
//!
//! A memory bank stores question/answer interactions indexed by an
//! append-only keyword vocabulary and an inverted keyword -> memory
//! mapping. At query time, query-relevant keywords are organized into a
//! pyramid of keyword groups (every non-empty subset), traversed from
//! the most specific group outward. Each round shows the LLM only
//! memories it has not seen, the model answers and judges sufficiency
//! while marking critical memories, and an accepted answer gets a final
//! formatting rewrite. An evaluation harness scores answers with F1,
//! BLEU-1, ROUGE-L, ROUGE-2, and METEOR, and accounts for every call,
//! token, and second spent.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod ingest;
pub mod keyword;
pub mod metrics;
pub mod prompts;
pub mod pyramid;
pub mod reflect;
pub mod store;

pub use error::{Error, Result};
pub use store::{MemoryBank, MemoryId, MemoryRecord};
