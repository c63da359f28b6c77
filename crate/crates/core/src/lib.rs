//! A meta-learning engine for few-shot classification that learns both an
//! easy-to-adapt weight initialization and one trainable inner-loop learning
//! rate per network layer.
//!
//! The engine is built on a small differentiable-program core ([`graph`])
//! whose reverse-mode gradients are emitted as graph nodes, so gradients of
//! gradients come for free. On top of that sit layered network definitions
//! ([`net`]), episodic task sampling ([`data`]), the bilevel training loop
//! ([`meta`]), and the instrumentation probes ([`probes`]): per-layer update
//! proportions, representation sparsity, and the layer-freezing speedup sweep.
//!
//! The `lwau` binary wires these together behind `train` / `eval` / `probe` /
//! `gendata` subcommands; see the crate README for the file formats.

pub mod config;
pub mod data;
pub mod graph;
pub mod io;
pub mod meta;
pub mod net;
pub mod probes;
pub mod rng;
pub mod tensor;

pub use tensor::{DType, Scalar, Tensor};
