//! Asymmetric JSCC autoencoder for the split-point feature.
//!
//! Encoder (device side): strided downsampling conv → 3×3 channel reduction
//! → GDN → flatten → power normalization. Decoder (edge side): IGDN → 3×3
//! conv to half width → bilinear upsampling → 3×3 conv to full width → ReLU.

use std::io::Write;

use rand::Rng;

use crate::channel::{self, ChannelSymbols, SnrSpec};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Gdn};
use crate::tensor::{ConvGeom, ParamStore, Scalar, Tape, Tensor, Var};

pub const ENCODER_PREFIX: &str = "encoder.";
pub const DECODER_PREFIX: &str = "decoder.";

/// Codec geometry relative to a (C, S, S) split-point feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CodecConfig {
    pub feature_channels: usize,
    pub feature_size: usize,
    /// Spatial downsampling factor: 2 or 4.
    pub spatial_down: usize,
    /// Channel reduction divisor of `feature_channels`.
    pub channel_factor: usize,
}

impl CodecConfig {
    pub fn new(feature_channels: usize, feature_size: usize, spatial_down: usize, channel_factor: usize) -> Result<Self> {
        let cfg = CodecConfig {
            feature_channels,
            feature_size,
            spatial_down,
            channel_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spatial_down != 2 && self.spatial_down != 4 {
            return Err(Error::config(format!(
                "spatial_down must be 2 or 4, got {}",
                self.spatial_down
            )));
        }
        if self.channel_factor == 0 || self.feature_channels % self.channel_factor != 0 {
            return Err(Error::config(format!(
                "channel_factor {} does not divide {} channels",
                self.channel_factor, self.feature_channels
            )));
        }
        if self.feature_size % self.spatial_down != 0 || self.feature_size < self.spatial_down {
            return Err(Error::config(format!(
                "feature size {} not divisible by spatial_down {}",
                self.feature_size, self.spatial_down
            )));
        }
        Ok(())
    }

    /// (channels, height, width) of the transmitted grid.
    pub fn compressed_shape(&self) -> (usize, usize, usize) {
        let s = self.feature_size / self.spatial_down;
        (self.feature_channels / self.channel_factor, s, s)
    }

    /// Number of real channel uses B per transmitted feature.
    pub fn symbols(&self) -> usize {
        let (c, h, w) = self.compressed_shape();
        c * h * w
    }

    pub fn feature_elements(&self) -> usize {
        self.feature_channels * self.feature_size * self.feature_size
    }

    pub fn compression_ratio(&self) -> usize {
        self.feature_elements() / self.symbols()
    }

    /// The 128× / 256× / 512× / 1024× ladder:
    /// (S/2, C/32), (S/2, C/64), (S/4, C/32), (S/4, C/64).
    pub fn ladder(feature_channels: usize, feature_size: usize) -> Result<Vec<CodecConfig>> {
        [(2, 32), (2, 64), (4, 32), (4, 64)]
            .into_iter()
            .map(|(s, c)| CodecConfig::new(feature_channels, feature_size, s, c))
            .collect()
    }

    fn down_geometry(&self) -> (usize, ConvGeom) {
        match self.spatial_down {
            4 => (4, ConvGeom::new(4, 0, 1)),
            _ => (3, ConvGeom::new(2, 1, 1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JsccCodec {
    pub cfg: CodecConfig,
    down: Conv2d,
    reduce: Conv2d,
    gdn: Gdn,
    igdn: Gdn,
    expand1: Conv2d,
    expand2: Conv2d,
}

impl JsccCodec {
    pub fn new(cfg: CodecConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.feature_channels;
        let (cc, _, _) = cfg.compressed_shape();
        let mid = (c / 2).max(1);
        let (k, geom) = cfg.down_geometry();
        Ok(JsccCodec {
            cfg,
            down: Conv2d::new("encoder.down", c, c, k, geom),
            reduce: Conv2d::same("encoder.reduce", c, cc, 3, 1, 1),
            gdn: Gdn::new("encoder.gdn", cc),
            igdn: Gdn::inverse("decoder.igdn", cc),
            expand1: Conv2d::same("decoder.expand1", cc, mid, 3, 1, 1),
            expand2: Conv2d::same("decoder.expand2", mid, c, 3, 1, 1),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore<f32>, rng: &mut R) {
        for conv in [&self.down, &self.reduce, &self.expand1, &self.expand2] {
            conv.init(store, rng);
        }
        self.gdn.init(store);
        self.igdn.init(store);
    }

    pub fn clamp(&self, store: &mut ParamStore<f32>) {
        self.gdn.clamp(store);
        self.igdn.clamp(store);
    }

    fn check_feature<S: Scalar>(&self, t: &Tensor<S>) -> Result<usize> {
        let (n, c, h, w) = t.dims4()?;
        if c != self.cfg.feature_channels || h != self.cfg.feature_size || w != self.cfg.feature_size {
            return Err(Error::config(format!(
                "codec expects ({}, {s}, {s}) features, got {:?}",
                self.cfg.feature_channels,
                t.shape(),
                s = self.cfg.feature_size
            )));
        }
        Ok(n)
    }

    /// D₁ batch (N, C, S, S) → power-normalized symbols (N, B).
    pub fn encode<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, d1: Var) -> Result<Var> {
        let n = self.check_feature(tape.value(d1))?;
        let h = self.down.forward(tape, store, d1)?;
        let h = self.reduce.forward(tape, store, h)?;
        let h = self.gdn.forward(tape, store, h)?;
        let flat = tape.reshape(h, &[n, self.cfg.symbols()])?;
        tape.power_normalize(flat)
    }

    /// Received symbols (N, B) → reconstructed feature (N, C, S, S).
    pub fn decode<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, y: Var) -> Result<Var> {
        let shape = tape.value(y).shape().to_vec();
        let b = self.cfg.symbols();
        if shape.len() != 2 || shape[1] != b {
            return Err(Error::dim(format!(
                "decoder expects (N, {b}) symbols, got {shape:?}"
            )));
        }
        let (c, hh, ww) = self.cfg.compressed_shape();
        let grid = tape.reshape(y, &[shape[0], c, hh, ww])?;
        let h = self.igdn.forward(tape, store, grid)?;
        let h = self.expand1.forward(tape, store, h)?;
        let h = tape.relu(h);
        let s = self.cfg.feature_size;
        let h = tape.upsample(h, s, s)?;
        let h = self.expand2.forward(tape, store, h)?;
        Ok(tape.relu(h))
    }

    /// encode → AWGN → decode. Returns (transmitted symbols, reconstruction).
    pub fn transmit<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        d1: Var,
        snr: &SnrSpec,
        seed: u64,
        first_index: u64,
    ) -> Result<(Var, Var)> {
        let y = self.encode(tape, store, d1)?;
        let y_noisy = channel::awgn_on_tape(tape, y, snr, seed, first_index)?;
        let x_rec = self.decode(tape, store, y_noisy)?;
        Ok((y, x_rec))
    }

    /// Inference-only encoding of a feature batch into per-example symbol blocks.
    pub fn encode_symbols(&self, store: &ParamStore<f32>, d1: &Tensor<f32>) -> Result<Vec<ChannelSymbols>> {
        let mut tape = Tape::new();
        let x = tape.constant(d1.clone());
        let y = self.encode(&mut tape, store, x)?;
        let b = self.cfg.symbols();
        Ok(tape
            .value(y)
            .data()
            .chunks(b)
            .map(|c| ChannelSymbols {
                values: c.to_vec(),
                power_checked: true,
            })
            .collect())
    }

    pub fn decode_symbols(&self, store: &ParamStore<f32>, blocks: &[ChannelSymbols]) -> Result<Tensor<f32>> {
        let b = self.cfg.symbols();
        let mut data = Vec::with_capacity(blocks.len() * b);
        for blk in blocks {
            if blk.len() != b {
                return Err(Error::dim(format!(
                    "symbol block of length {} for B = {b}",
                    blk.len()
                )));
            }
            data.extend_from_slice(&blk.values);
        }
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::new(&[blocks.len(), b], data)?);
        let x = self.decode(&mut tape, store, y)?;
        Ok(tape.value(x).clone())
    }
}

/// Mean absolute difference between a feature and its reconstruction.
pub fn feature_l1<S: Scalar>(tape: &mut Tape<S>, x: Var, x_prime: Var) -> Result<Var> {
    tape.l1_mean(x, x_prime)
}

/// Writes symbol blocks back to back as little-endian f32.
pub fn write_symbols<W: Write>(blocks: &[ChannelSymbols], mut w: W) -> Result<()> {
    for blk in blocks {
        for v in &blk.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}
