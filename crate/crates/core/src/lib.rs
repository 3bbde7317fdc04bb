//! Joint source-channel coding of the split-point feature of a small
//! detection + segmentation network, transmitted over an AWGN channel, and
//! a separate source/channel coding baseline for comparison.

pub mod baseline;
pub mod channel;
pub mod codec;
pub mod error;
pub mod harness;
pub mod layers;
pub mod mtl;
pub mod parallel;
pub mod tensor;

pub use error::{Error, Result};
