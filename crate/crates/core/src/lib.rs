//! Aligned cross entropy (AXE) for non-autoregressive sequence models.
//!
//! The crate contains the AXE dynamic program with exhaustive reference
//! oracles ([`axe`]), CMLM-style masking and training objectives
//! ([`objectives`]), a small encoder-decoder with hand-written
//! backpropagation for desk-scale experiments ([`toy`]), single-pass
//! decoding and analysis metrics ([`decode`], [`metrics`]), and the text
//! file formats and experiment runner behind the `axe` command-line tool
//! ([`io`], [`experiment`]).

pub mod axe;
pub mod decode;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod objectives;
pub mod toy;
pub mod types;

pub use error::{AxeError, Result};
