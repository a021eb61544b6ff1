//! Synthesis, corruption and recovery of DVB-S2 / GSE / IPv4 satellite streams.
//!
//! The crate covers the whole experiment loop:
//!
//! - [`codec`] and [`crc`]: bit-exact BB, GSE and IPv4 header formats.
//! - [`synth`]: annotated ground-truth streams.
//! - [`corruption`]: the per-bit flip/loss channel.
//! - [`fsm`]: the length-field driven baseline decoder.
//! - [`nn`]: dilated-convolution encoder, classifier head, NT-Xent, Adam.
//! - [`train`]: contrastive pre-training and supervised fine-tuning.
//! - [`recover`]: sliding-window header detection and PDU extraction.
//! - [`eval`]: datasets, metrics, corruption sweeps and throughput.

pub mod bits;
pub mod codec;
pub mod corruption;
pub mod crc;
pub mod error;
pub mod eval;
pub mod fsm;
pub mod hexbytes;
pub mod layer;
pub mod nn;
pub mod recover;
pub mod seed;
pub mod synth;
pub mod train;

pub use bits::{Origin, Window};
pub use error::{Error, Result};
pub use layer::Layer;
