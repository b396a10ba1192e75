//! Text-to-speech frontend built from sequence-to-sequence models.
//!
//! Normalization (raw text to spelled-out words) and pronunciation (words to
//! phones) are both treated as translation. The crate covers the whole loop:
//! parallel corpora from a teacher system, joint BPE, a small encoder-decoder
//! transformer with SGD training, chunked translation of long sentences with
//! overlap splicing, and BLEU / chrF3 / diff evaluation.

pub mod bpe;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod splice;
pub mod synth;

pub use error::{Error, Result};
