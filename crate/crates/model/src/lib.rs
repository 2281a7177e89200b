//! Self-distilled tactile representation learning: encoder, optimizer,
//! masked-view pretraining, probes, and downstream decoders.

pub mod checkpoint;
pub mod corpus;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod mask;
pub mod optim;
pub mod pretrain;
pub mod probes;
pub mod ssl;

pub use encoder::{EncoderConfig, EncoderParams};
pub use error::{ModelError, Result};
