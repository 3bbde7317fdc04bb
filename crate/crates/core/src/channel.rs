//! Power normalization and the real-valued AWGN channel `z' = z + n`,
//! `n ~ N(0, σ²)`, with transmit power P = 1 and SNR = P / σ².
//!
//! Noise comes from ChaCha8 streams (portable, seedable) shaped by the
//! `rand_distr` ziggurat standard normal. Every transmitted example draws
//! from its own stream seeded by [`derive_seed`]`(base, index)`, so batch
//! parallelism never changes the realised noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Average transmit power constraint.
pub const TX_POWER: f64 = 1.0;

const DEGENERATE_ENERGY: f64 = 1e-12;

pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    TX_POWER / 10f64.powf(snr_db / 10.0)
}

pub fn sigma2_to_snr(sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!(
            "noise variance must be positive, got {sigma2}"
        )));
    }
    Ok(10.0 * (TX_POWER / sigma2).log10())
}

/// Channel condition; `sigma2 = 0` is the noiseless channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnrSpec {
    pub snr_db: f64,
    pub sigma2: f64,
}

impl SnrSpec {
    pub fn from_db(snr_db: f64) -> Self {
        SnrSpec {
            snr_db,
            sigma2: snr_to_sigma2(snr_db),
        }
    }

    pub fn noiseless() -> Self {
        SnrSpec {
            snr_db: f64::INFINITY,
            sigma2: 0.0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma2 == 0.0
    }

    /// `None` maps to the noiseless channel.
    pub fn from_option(snr_db: Option<f64>) -> Self {
        snr_db.map_or_else(Self::noiseless, Self::from_db)
    }
}

/// Flat block of real channel uses.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSymbols {
    pub values: Vec<f32>,
    /// Set once the block is known to satisfy the power constraint.
    pub power_checked: bool,
}

impl ChannelSymbols {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.values)
    }
}

pub fn mean_power(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / v.len().max(1) as f64
}

/// `z · sqrt(P·B / Σ z²)` for a single transmission.
pub fn power_normalize(z: &[f32]) -> Result<ChannelSymbols> {
    if z.is_empty() {
        return Err(Error::dim("power_normalize of an empty vector"));
    }
    let energy: f64 = z.iter().map(|&v| (v as f64) * (v as f64)).sum();
    if energy < DEGENERATE_ENERGY {
        return Err(Error::Degenerate(
            "all-zero feature cannot be power normalized".into(),
        ));
    }
    let scale = (TX_POWER * z.len() as f64 / energy).sqrt();
    Ok(ChannelSymbols {
        values: z.iter().map(|&v| (v as f64 * scale) as f32).collect(),
        power_checked: true,
    })
}

/// SplitMix64 step; decorrelates per-example seeds derived from one base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `len` i.i.d. N(0, σ²) samples from the stream seeded with `seed`.
pub fn gaussian_noise(len: usize, sigma2: f64, seed: u64) -> Vec<f64> {
    if sigma2 == 0.0 {
        return vec![0.0; len];
    }
    let sigma = sigma2.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sigma
        })
        .collect()
}

pub fn awgn_apply(z: &ChannelSymbols, snr: &SnrSpec, rng_seed: u64) -> ChannelSymbols {
    if snr.is_noiseless() {
        return z.clone();
    }
    let noise = gaussian_noise(z.len(), snr.sigma2, rng_seed);
    ChannelSymbols {
        values: z
            .values
            .iter()
            .zip(noise)
            .map(|(&v, n)| (v as f64 + n) as f32)
            .collect(),
        power_checked: false,
    }
}

/// Adds channel noise to a batched symbol tensor on the tape.
///
/// Sample `i` uses the stream `derive_seed(base_seed, first_index + i)`. The
/// noise is a constant of the graph: the gradient passes straight through.
pub fn awgn_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    symbols: Var,
    snr: &SnrSpec,
    base_seed: u64,
    first_index: u64,
) -> Result<Var> {
    if snr.is_noiseless() {
        return Ok(symbols);
    }
    let shape = tape.value(symbols).shape().to_vec();
    let n = shape[0];
    let per = tape.value(symbols).len() / n;
    let mut noise = Vec::with_capacity(n * per);
    for i in 0..n {
        let seed = derive_seed(base_seed, first_index + i as u64);
        noise.extend(gaussian_noise(per, snr.sigma2, seed).into_iter().map(S::lit));
    }
    let noise = Tensor::new(&shape, noise)?;
    tape.add_const(symbols, &noise)
}
