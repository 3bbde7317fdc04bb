//! The separate arm end to end: quantize → block-DCT codec → optional
//! convolutional code → BPSK/QPSK → AWGN → hard demodulation → Viterbi →
//! container decode → dequantize, with the all-zeros fallback on failure.

use super::bits::{bits_to_bytes, bytes_to_bits};
use super::container::{decode_container, encode_container};
use super::convcode::{conv_encode, viterbi_decode};
use super::modem::{demodulate, modulate, Modulation};
use super::quantize::{dequantize, quantize};
use crate::channel::{derive_seed, gaussian_noise, SnrSpec};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeparateConfig {
    pub quality: u8,
    pub coded: bool,
    pub modulation: Modulation,
}

impl SeparateConfig {
    pub fn label(&self) -> String {
        format!(
            "q{}-{}-{}",
            self.quality,
            if self.coded { "conv" } else { "uncoded" },
            self.modulation.name()
        )
    }
}

/// Bit and channel-use accounting of one transmitted feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameStats {
    pub feature_elements: usize,
    pub source_bits: usize,
    pub coded_bits: usize,
    pub channel_uses: usize,
    pub success: bool,
}

impl FrameStats {
    /// Feature elements per real channel use, the same measure as the JSCC
    /// ratio (elements / B).
    pub fn equivalent_ratio(&self) -> f64 {
        self.feature_elements as f64 / self.channel_uses as f64
    }
}

/// Transmits one (C, H, W) feature. Decode failures are data, not errors:
/// the reconstruction is all zeros and `success` is false.
pub fn transmit_frame(
    feature: &[f32],
    shape: (usize, usize, usize),
    cfg: &SeparateConfig,
    snr: &SnrSpec,
    seed: u64,
) -> Result<(Vec<f32>, FrameStats)> {
    let (c, h, w) = shape;
    let (grid, spec) = quantize(feature, c, h, w)?;
    let bytes = encode_container(&grid, &spec, cfg.quality)?;
    let source = bytes_to_bits(&bytes);
    let coded = if cfg.coded { conv_encode(&source) } else { source.clone() };
    let frame = modulate(&coded, cfg.modulation, if cfg.coded { 0.5 } else { 1.0 });
    let noise = gaussian_noise(frame.channel_uses(), snr.sigma2, seed);
    let received: Vec<f64> = frame.symbols.iter().zip(&noise).map(|(s, n)| s + n).collect();
    let hard = demodulate(&received, cfg.modulation, frame.pad_bits)?;
    let bits = if cfg.coded { viterbi_decode(&hard) } else { hard };
    let decoded = decode_container(&bits_to_bytes(&bits))
        .and_then(|f| {
            if (f.grid.channels, f.grid.height, f.grid.width) != shape {
                return Err(Error::format("decoded shape differs"));
            }
            dequantize(&f.grid, &f.spec)
        });
    let stats = FrameStats {
        feature_elements: feature.len(),
        source_bits: source.len(),
        coded_bits: coded.len(),
        channel_uses: frame.channel_uses(),
        success: decoded.is_ok(),
    };
    Ok((decoded.unwrap_or_else(|_| vec![0.0; feature.len()]), stats))
}

/// Per-example frames of an (N, C, H, W) batch; example `first_index + i`
/// draws noise from `derive_seed(base_seed, first_index + i)`.
pub fn separate_pipeline(
    features: &Tensor<f32>,
    cfg: &SeparateConfig,
    snr: &SnrSpec,
    base_seed: u64,
    first_index: u64,
) -> Result<(Tensor<f32>, Vec<FrameStats>)> {
    let (n, c, h, w) = features.dims4()?;
    let per = c * h * w;
    let frames = map_indexed(n, |i| {
        transmit_frame(
            &features.data()[i * per..(i + 1) * per],
            (c, h, w),
            cfg,
            snr,
            derive_seed(base_seed, first_index + i as u64),
        )
    });
    let mut data = Vec::with_capacity(n * per);
    let mut stats = Vec::with_capacity(n);
    for f in frames {
        let (rec, s) = f?;
        data.extend(rec);
        stats.push(s);
    }
    Ok((Tensor::new(features.shape(), data)?, stats))
}

/// Quantize → dequantize only; the lossless-channel, lossless-codec ablation.
pub fn quantize_only(features: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (n, c, h, w) = features.dims4()?;
    let per = c * h * w;
    let mut data = Vec::with_capacity(n * per);
    for f in features.data().chunks(per) {
        let (grid, spec) = quantize(f, c, h, w)?;
        data.extend(dequantize(&grid, &spec)?);
    }
    Tensor::new(features.shape(), data)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn feature(seed: u64) -> Tensor<f32> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[3, 8, 8, 8], 1.0, &mut r).map(|v: f32| v.max(0.0))
    }

    fn cfg(coded: bool) -> SeparateConfig {
        SeparateConfig {
            quality: 90,
            coded,
            modulation: Modulation::Bpsk,
        }
    }

    #[test]
    fn noiseless_path_is_bounded_by_source_loss() {
        let f = feature(1);
        for modulation in [Modulation::Bpsk, Modulation::Qpsk] {
            let c = SeparateConfig { quality: 100, coded: true, modulation };
            let (rec, stats) = separate_pipeline(&f, &c, &SnrSpec::noiseless(), 0, 0).unwrap();
            assert!(stats.iter().all(|s| s.success));
            let q = quantize_only(&f).unwrap();
            // Quality 100: only DCT rounding (≤ 2 codes) on top of quantization.
            let (_, spec) = quantize(&f.data()[..512], 8, 8, 8).unwrap();
            let step = (0..8).map(|c| 2.0 * spec.max_error(c)).fold(0.0f32, f32::max);
            assert!(rec.sample(0).unwrap().max_abs_diff(&q.sample(0).unwrap()) <= 2.0 * step as f64 + 1e-6);
            let s = stats[0];
            assert_eq!(s.coded_bits, 2 * (s.source_bits + 6));
            assert_eq!(s.channel_uses, s.coded_bits + s.coded_bits % modulation.bits_per_symbol());
            assert_eq!(s.feature_elements, 512);
        }
    }

    #[test]
    fn failure_falls_back_to_zeros() {
        let f = feature(2);
        let (rec, stats) = separate_pipeline(&f, &cfg(false), &SnrSpec::from_db(-5.0), 3, 0).unwrap();
        assert!(stats.iter().all(|s| !s.success));
        assert!(rec.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn high_snr_coded_frames_succeed() {
        let f = feature(3);
        let (_, stats) = separate_pipeline(&f, &cfg(true), &SnrSpec::from_db(10.0), 4, 0).unwrap();
        assert!(stats.iter().all(|s| s.success));
    }

    #[test]
    fn decode_success_falls_off_a_cliff() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let f = Tensor::randn(&[100, 8, 8, 8], 1.0, &mut r).map(|v: f32| v.max(0.0));
        let c = SeparateConfig {
            quality: 75,
            ..cfg(true)
        };
        let grid: Vec<f64> = (0..=12).map(f64::from).collect();
        let rates: Vec<f64> = grid
            .iter()
            .map(|&snr| {
                let (_, stats) = separate_pipeline(&f, &c, &SnrSpec::from_db(snr), 6, 0).unwrap();
                stats.iter().filter(|s| s.success).count() as f64 / stats.len() as f64
            })
            .collect();
        assert!(rates[10] >= 0.99, "{rates:?}");
        let inversions = rates.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(inversions <= 1, "{rates:?}");
        let threshold = rates.iter().position(|&x| x >= 0.99).unwrap();
        assert!(threshold >= 5 && rates[threshold - 5] <= 0.05, "{rates:?}");
    }

    #[test]
    fn frames_are_reproducible() {
        let f = feature(4);
        let snr = SnrSpec::from_db(5.0);
        let a = separate_pipeline(&f, &cfg(true), &snr, 9, 0).unwrap();
        let b = separate_pipeline(&f, &cfg(true), &snr, 9, 0).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
