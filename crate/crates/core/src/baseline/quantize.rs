use crate::error::{Error, Result};

/// Per-channel affine range; `degenerate` marks max == min (all codes 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelRange {
    pub min: f32,
    pub max: f32,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizerSpec {
    pub bits: u8,
    pub ranges: Vec<ChannelRange>,
}

impl QuantizerSpec {
    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    /// Half a quantization step of channel `c`: the reconstruction error bound.
    pub fn max_error(&self, c: usize) -> f32 {
        let r = self.ranges[c];
        (r.max - r.min) / (2.0 * (self.levels() - 1) as f32)
    }
}

/// Integer planes (channel-major, row-major within a plane).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub codes: Vec<u8>,
}

/// Maps each channel of a (C, H, W) feature affinely onto 0..=255 with
/// round-half-to-even.
pub fn quantize(feature: &[f32], channels: usize, height: usize, width: usize) -> Result<(CodeGrid, QuantizerSpec)> {
    let plane = height * width;
    if feature.len() != channels * plane || plane == 0 {
        return Err(Error::dim(format!(
            "quantize: {} values for ({channels}, {height}, {width})",
            feature.len()
        )));
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("quantize: non-finite feature value".into()));
    }
    let top = 255.0f32;
    let mut ranges = Vec::with_capacity(channels);
    let mut codes = Vec::with_capacity(feature.len());
    for p in feature.chunks(plane) {
        let min = p.iter().copied().fold(f32::INFINITY, f32::min);
        let max = p.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let degenerate = max == min;
        ranges.push(ChannelRange { min, max, degenerate });
        if degenerate {
            codes.extend(std::iter::repeat_n(0u8, plane));
            continue;
        }
        let scale = top / (max - min);
        codes.extend(
            p.iter()
                .map(|&v| ((v - min) * scale).round_ties_even().clamp(0.0, top) as u8),
        );
    }
    Ok((
        CodeGrid {
            channels,
            height,
            width,
            codes,
        },
        QuantizerSpec { bits: 8, ranges },
    ))
}

pub fn dequantize(grid: &CodeGrid, spec: &QuantizerSpec) -> Result<Vec<f32>> {
    if spec.ranges.len() != grid.channels || spec.bits != 8 {
        return Err(Error::dim("dequantize: side information does not match the grid"));
    }
    let plane = grid.height * grid.width;
    let step_den = (spec.levels() - 1) as f32;
    Ok(grid
        .codes
        .chunks(plane)
        .zip(&spec.ranges)
        .flat_map(|(p, r)| {
            let r = *r;
            p.iter().map(move |&q| {
                if r.degenerate {
                    r.min
                } else {
                    r.min + q as f32 * (r.max - r.min) / step_den
                }
            })
        })
        .collect())
}
