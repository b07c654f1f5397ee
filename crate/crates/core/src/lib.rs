//! Hierarchical latent story planning.
//!
//! The crate is layered bottom-up: a small reverse-mode autodiff engine over
//! dense matrices ([`graph`]), parameter storage and the Nesterov optimizer,
//! then the models (token LM, dual sentence encoder, TD-VAE, discriminator
//! baselines), generation with reranking, and the swap/mutation coherence
//! evaluation. Everything here is `no_std` + `alloc`; file formats and the
//! command line live in the `storyplan` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bundle;
pub mod corpus;
pub mod discriminator;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod generation;
pub mod gradcheck;
pub mod gradsuite;
pub mod lm;
pub mod graph;
pub mod nn;
pub mod noise;
pub mod optim;
pub mod params;
pub mod tdvae;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::{Group, ParamId, ParameterStore};
pub use tensor::Tensor;
