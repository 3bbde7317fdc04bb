//! Monte-Carlo bit-error-rate measurement against the analytic BPSK curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::convcode::{conv_encode, viterbi_decode};
use crate::channel::{derive_seed, gaussian_noise};
use crate::parallel::map_indexed;

const CHUNK_BITS: usize = 1 << 14;

/// Gaussian tail probability Q(x) = P(N(0,1) > x).
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Uncoded BPSK bit error probability Q(√(2·Eb/N0)).
pub fn bpsk_theory_ber(ebn0_db: f64) -> f64 {
    q_function((2.0 * 10f64.powf(ebn0_db / 10.0)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BerPoint {
    pub ebn0_db: f64,
    pub bits: u64,
    pub errors: u64,
    pub coded: bool,
}

impl BerPoint {
    pub fn ber(&self) -> f64 {
        self.errors as f64 / self.bits as f64
    }

    pub fn theory_uncoded(&self) -> f64 {
        bpsk_theory_ber(self.ebn0_db)
    }
}

/// BPSK over the real AWGN channel at the given Eb/N0 (energy per
/// information bit). Unit-energy symbols see noise variance 1/(2·R·Eb/N0),
/// R = 1/2 with the convolutional code and 1 without.
pub fn simulate_ber(ebn0_db: f64, n_bits: u64, coded: bool, seed: u64) -> BerPoint {
    let rate = if coded { 0.5 } else { 1.0 };
    let sigma2 = 1.0 / (2.0 * rate * 10f64.powf(ebn0_db / 10.0));
    let chunks = (n_bits as usize).div_ceil(CHUNK_BITS);
    let errors: Vec<u64> = map_indexed(chunks, |i| {
        let len = CHUNK_BITS.min(n_bits as usize - i * CHUNK_BITS);
        let s = derive_seed(seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let bits: Vec<u8> = (0..len).map(|_| rng.random_range(0..2u8)).collect();
        let tx = if coded { conv_encode(&bits) } else { bits.clone() };
        let noise = gaussian_noise(tx.len(), sigma2, derive_seed(s, u64::MAX));
        let rx: Vec<u8> = tx
            .iter()
            .zip(&noise)
            .map(|(&b, n)| ((if b == 0 { 1.0 } else { -1.0 }) + n < 0.0) as u8)
            .collect();
        let out = if coded { viterbi_decode(&rx) } else { rx };
        out.iter().zip(&bits).filter(|(a, b)| a != b).count() as u64
    });
    BerPoint {
        ebn0_db,
        bits: n_bits,
        errors: errors.iter().sum(),
        coded,
    }
}

/// One row per point: `ebn0_db,coded,bits,errors,ber,theory_uncoded`.
pub fn write_ber_csv<W: std::io::Write>(points: &[BerPoint], w: W) -> crate::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["ebn0_db", "coded", "bits", "errors", "ber", "theory_uncoded"])?;
    for p in points {
        csv.write_record([
            p.ebn0_db.to_string(),
            p.coded.to_string(),
            p.bits.to_string(),
            p.errors.to_string(),
            p.ber().to_string(),
            p.theory_uncoded().to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
