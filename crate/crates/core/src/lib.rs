//! Multilingual directed acyclic Transformer (M-DAT) for non-autoregressive
//! translation, built on a small reverse-mode autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`params`]: dense tensors, the computation graph and
//!   named parameter storage.
//! * [`model`]: encoder, DAG decoder (word and link heads), and an
//!   autoregressive baseline; checkpoint files.
//! * [`dag`]: path probabilities and the marginal likelihood over all
//!   lattice paths.
//! * [`decoding`]: lookahead and n-gram beam search, the n-gram LM.
//! * [`data`]: vocabulary, synthetic multilingual corpora, batching.
//! * [`pivotbt`]: online back-translation routed through a pivot language.
//! * [`train`] and [`eval`]: optimisation, checkpoint averaging, BLEU,
//!   word preservation and latency measurement.
//! * [`experiment`]: end-to-end runs used by the command-line tool.

pub mod dag;
pub mod data;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod params;
pub mod pivotbt;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tensor::{Graph, Real, Tensor};
