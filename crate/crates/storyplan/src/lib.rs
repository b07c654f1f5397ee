//! File formats, checkpoints, workflows and the command line for `storyplan`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod workflow;

pub use error::{AppError, AppResult};
