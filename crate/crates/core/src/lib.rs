//! Text-conditional molecule generation.
//!
//! An LLM is prompted with retrieved description/SMILES demonstrations and
//! asked for ranked candidates plus an explanation. The original text, the
//! explanation and the candidate set are embedded, pooled and fused by a
//! two-level attention block, and a small transformer decodes SMILES from
//! the fused vector.
//!
//! Modules, bottom up: [`numcore`] (tensors, autodiff, Adam), [`smiles`]
//! (parser, canonical form, fingerprints), [`metrics`], [`dataset`],
//! [`prompting`], [`llmclient`], [`embeddings`], [`fusion`], [`decoder`],
//! and [`pipeline`] which wires them into the `textmol` commands.

pub mod numcore;
pub mod smiles;
pub mod metrics;
pub mod dataset;
pub mod embeddings;
pub mod prompting;
pub mod llmclient;
pub mod fusion;
pub mod decoder;
pub mod pipeline;
