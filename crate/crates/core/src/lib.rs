//! Word-image retrieval by self-supervised representation learning.
//!
//! The pipeline has three training phases and a retrieval phase:
//!
//! 1. **Pretraining** ([`vitmae`]): a masked autoencoder over image patches.
//!    75% of the patches are hidden, a vision-transformer encoder sees only
//!    the visible ones, and a lightweight decoder reconstructs the masked
//!    pixels under an MSE loss. Labels are never used.
//! 2. **Fine-tuning** ([`finetune`]): the pretrained encoder is adapted in
//!    two supervised steps — a siamese similarity model over labeled image
//!    pairs, then alignment to per-word character-attribute vectors
//!    ([`phoc`]).
//! 3. **Retrieval** ([`retrieval`], [`evalkit`]): pooled encoder features are
//!    reduced with PCA and ranked by cosine distance; quality is measured as
//!    mean average precision under a leave-one-out protocol.
//!
//! [`corpus`] handles dataset ingestion, normalization, augmentation and a
//! synthetic word-image generator so the whole chain runs at desk scale.
//! [`pipeline`] wires the stages together behind a single JSON config; the
//! `wordspot` binary is a thin front end over it.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod finetune;
pub mod nn;
pub mod phoc;
pub mod pipeline;
pub mod retrieval;
pub mod vitmae;

pub use error::{Error, Result};
