//! Training-free cross-lingual region captioning.
//!
//! The pipeline runs in four stages over Visual-Genome-style region captions:
//!
//! 1. [`dialogue`]: two multimodal chat backends each write a synthetic
//!    conversation about the cropped region, and a third call fuses them.
//! 2. [`translation`]: the fused English conversation is translated into the
//!    target language, routed per language to a dedicated MT service or an LLM.
//! 3. [`captioner`]: a weighted prompt balances the English caption against the
//!    translated conversation and asks for a target-language caption.
//! 4. [`metrics`] and [`experiments`]: BLEU, RIBES and embedding similarity
//!    scores, averaged over a seeded subset for each context weight.
//!
//! All model access goes through [`gateway::Gateway`], which caches every
//! response by content hash and ships a deterministic mock backend so the
//! whole pipeline runs offline.

pub mod captioner;
pub mod corpus;
pub mod dialogue;
pub mod experiments;
pub mod gateway;
pub mod imaging;
pub mod language;
pub mod metrics;
pub mod pipeline;
pub mod template;
pub mod translation;

pub use language::{Language, Split};
