pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod latent_search;
pub mod nn;
pub mod nn_index;
pub mod novelty;
pub mod selftest;
pub mod vae;

pub use error::{Error, Result};
