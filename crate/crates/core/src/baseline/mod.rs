//! Separate source/channel coding: 8-bit quantization, a JPEG-style block
//! transform codec, a (133, 171) convolutional code, BPSK/QPSK and hard
//! decisions. Shows the cliff effect JSCC avoids.

pub mod ber;
pub mod bits;
pub mod container;
pub mod convcode;
pub mod dct;
pub mod entropy;
pub mod modem;
pub mod pipeline;
pub mod quantize;

pub use ber::{bpsk_theory_ber, q_function, simulate_ber, write_ber_csv, BerPoint};
pub use container::{decode_container, encode_container, DecodedFrame, SEP_MAGIC};
pub use convcode::{conv_encode, viterbi_decode};
pub use modem::{demodulate, modulate, CodedFrame, Modulation};
pub use pipeline::{quantize_only, separate_pipeline, transmit_frame, FrameStats, SeparateConfig};
pub use quantize::{dequantize, quantize, ChannelRange, CodeGrid, QuantizerSpec};
