//! Rate-1/2, constraint-length-7 convolutional code with generators
//! (133, 171) octal, zero-terminated, and a hard-decision Viterbi decoder.

pub const CONSTRAINT_LEN: usize = 7;
const MEMORY: usize = CONSTRAINT_LEN - 1;
const STATES: usize = 1 << MEMORY;
const G1: u32 = 0o133;
const G2: u32 = 0o171;

/// Output pair for shift-register contents `reg` (newest bit at bit 6).
fn outputs(reg: u32) -> (u8, u8) {
    (((reg & G1).count_ones() & 1) as u8, ((reg & G2).count_ones() & 1) as u8)
}

/// Encodes bits (one per element); output length 2·(len + 6).
pub fn conv_encode(bits: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * (bits.len() + MEMORY));
    let mut state = 0u32;
    for &b in bits.iter().chain(std::iter::repeat_n(&0u8, MEMORY)) {
        let reg = ((b as u32 & 1) << MEMORY) | state;
        let (o1, o2) = outputs(reg);
        out.push(o1);
        out.push(o2);
        state = reg >> 1;
    }
    out
}

/// Maximum-likelihood (Hamming metric) path through the terminated trellis.
pub fn viterbi_decode(coded: &[u8]) -> Vec<u8> {
    let steps = coded.len() / 2;
    if steps <= MEMORY {
        return Vec::new();
    }
    const INF: u32 = u32::MAX / 2;
    let mut metric = [INF; STATES];
    metric[0] = 0;
    // decisions[t] bit s: which predecessor (low bit) won for state s.
    let mut decisions = vec![0u64; steps];
    let table: Vec<[(u8, u8); 2]> = (0..STATES as u32)
        .map(|ns| {
            let u = ns >> (MEMORY - 1);
            let base = (ns & ((1 << (MEMORY - 1)) - 1)) << 1;
            [0, 1].map(|b| outputs((u << MEMORY) | base | b))
        })
        .collect();
    for t in 0..steps {
        let (r1, r2) = (coded[2 * t], coded[2 * t + 1]);
        let mut next = [INF; STATES];
        let mut dec = 0u64;
        for ns in 0..STATES {
            let base = (ns & ((1 << (MEMORY - 1)) - 1)) << 1;
            let mut best = INF;
            let mut pick = 0;
            for b in 0..2 {
                let prev = metric[base | b];
                if prev >= INF {
                    continue;
                }
                let (o1, o2) = table[ns][b];
                let m = prev + (o1 != r1) as u32 + (o2 != r2) as u32;
                if m < best {
                    best = m;
                    pick = b;
                }
            }
            next[ns] = best;
            dec |= (pick as u64) << ns;
        }
        decisions[t] = dec;
        metric = next;
    }
    let mut bits = vec![0u8; steps];
    let mut state = 0usize;
    for t in (0..steps).rev() {
        bits[t] = (state >> (MEMORY - 1)) as u8;
        let b = ((decisions[t] >> state) & 1) as usize;
        state = ((state & ((1 << (MEMORY - 1)) - 1)) << 1) | b;
    }
    bits.truncate(steps - MEMORY);
    bits
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_bits(n: usize, seed: u64) -> Vec<u8> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random_range(0..2u8)).collect()
    }

    #[test]
    fn impulse_response_matches_generators() {
        // A single 1 followed by zeros emits the generator taps, newest first.
        let out = conv_encode(&[1]);
        let g1: Vec<u8> = out.iter().step_by(2).copied().collect();
        let g2: Vec<u8> = out.iter().skip(1).step_by(2).copied().collect();
        assert_eq!(g1, vec![1, 0, 1, 1, 0, 1, 1]);
        assert_eq!(g2, vec![1, 1, 1, 1, 0, 0, 1]);
    }

    #[test]
    fn noiseless_loopback_and_zero_word() {
        let b = random_bits(1000, 1);
        let c = conv_encode(&b);
        assert_eq!(c.len(), 2 * 1006);
        assert_eq!(viterbi_decode(&c), b);
        assert!(conv_encode(&[0; 50]).iter().all(|&v| v == 0));
    }

    #[test]
    fn corrects_every_single_error() {
        let b = random_bits(64, 2);
        let c = conv_encode(&b);
        for i in 0..c.len() {
            let mut e = c.clone();
            e[i] ^= 1;
            assert_eq!(viterbi_decode(&e), b, "flip at {i}");
        }
    }

    #[test]
    fn free_distance_is_ten() {
        // Minimum weight over short terminated nonzero inputs.
        let mut min_w = usize::MAX;
        for m in 1u32..(1 << 10) {
            let bits: Vec<u8> = (0..10).map(|i| ((m >> i) & 1) as u8).collect();
            min_w = min_w.min(conv_encode(&bits).iter().filter(|&&v| v == 1).count());
        }
        assert_eq!(min_w, 10);
    }

    #[test]
    fn corrects_scattered_errors() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let b = random_bits(500, 4);
        let mut c = conv_encode(&b);
        // One error every ~40 coded bits is well inside the correction power.
        let mut i = r.random_range(0..40);
        while i < c.len() {
            c[i] ^= 1;
            i += 40 + r.random_range(0..10);
        }
        assert_eq!(viterbi_decode(&c), b);
    }

    #[test]
    fn matches_brute_force_maximum_likelihood() {
        // Every 8-bit message is a candidate; Viterbi must reach the minimum distance.
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let book: Vec<(Vec<u8>, Vec<u8>)> = (0..256u32)
            .map(|m| {
                let b: Vec<u8> = (0..8).map(|i| ((m >> i) & 1) as u8).collect();
                let c = conv_encode(&b);
                (b, c)
            })
            .collect();
        let dist = |a: &[u8], b: &[u8]| a.iter().zip(b).filter(|(x, y)| x != y).count();
        for _ in 0..300 {
            let rx: Vec<u8> = (0..28).map(|_| (r.random::<f64>() < 0.5) as u8).collect();
            let best = book.iter().map(|(_, c)| dist(c, &rx)).min().unwrap();
            let dec = viterbi_decode(&rx);
            assert_eq!(dist(&conv_encode(&dec), &rx), best);
        }
    }
}
