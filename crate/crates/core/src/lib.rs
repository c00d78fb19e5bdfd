//! Accent-codebook ASR at desk scale.
//!
//! This crate implements a joint CTC-attention encoder-decoder whose encoder
//! layers cross-attend over per-accent learnable codebooks, the multi-accent
//! beam-search decoders that go with it, and the surrounding tooling: a
//! minimal reverse-mode autodiff tensor library, synthetic accented-corpus
//! generation with a speaker/transcript-disjoint splitter, and WER /
//! significance-test evaluation.
//!
//! Layout:
//!
//! - [`tensor`] — dense tensors with a reverse-mode gradient tape.
//! - [`rng`] — seedable counter-based randomness, split per purpose.
//! - [`layers`] — attention, convolution block, feed-forward, embedding.
//! - [`codebook`] — per-accent codebook banks with hard gating.
//! - [`model`] — encoder/decoder assembly, CTC and joint losses, training,
//!   checkpoints.
//! - [`decoding`] — beam-search variants (standard, per-accent, split-beam,
//!   joint) plus beam statistics capture.
//! - [`data`] — synthetic corpus generation, feature file I/O, manifests,
//!   seven-bucket splitting.
//! - [`evaluate`] — WER, matched-pairs significance testing, codebook
//!   utilization and beam-entropy reports.

pub mod codebook;
pub mod data;
pub mod decoding;
pub mod evaluate;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;

pub use rng::Rng;
pub use tensor::{Element, Tensor};
