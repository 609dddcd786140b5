//! Neural machine translation with Recurrent Highway Network (RHN) recurrences.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors and a reverse-mode differentiation tape
//! - [`rhn`]: the RHN cell (L highway micro-layers per time step) and stacks of cells
//! - [`model`]: attention encoder-decoder translation model with an optional
//!   training-only reconstructor, plus checkpoints
//! - [`data`]: vocabularies, sentence framing, padding and length bucketing
//! - [`train`]: SGD on `L = L_d + beta * L_r` with gradient-norm clipping
//! - [`decode`]: greedy and beam search
//! - [`metrics`]: perplexity, corpus BLEU and model evaluation
//! - [`cli`]: the `rhnmt` command line (train, translate, evaluate, score)
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod data;
pub mod decode;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod rhn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, ParamId, ParamStore, Tensor, Var};
