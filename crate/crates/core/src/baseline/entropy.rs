//! Lossless stage: DC differences and AC run-lengths as (run, size) symbols
//! plus magnitude bits, coded with canonical Huffman tables built per frame.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

pub const MAX_CODE_LEN: u8 = 24;
const MAX_MAGNITUDE: i32 = (1 << 15) - 1;
const EOB: u8 = 0x00;
const ZRL: u8 = 0xF0;

/// Canonical prefix code: (symbol, length) pairs sorted by (length, symbol).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HuffmanTable {
    entries: Vec<(u8, u8)>,
    codes: Vec<Option<(u32, u8)>>,
    counts: [u32; MAX_CODE_LEN as usize + 1],
}

impl HuffmanTable {
    /// Optimal code lengths for the given counts, limited to `MAX_CODE_LEN`
    /// by repeatedly halving counts.
    pub fn from_frequencies(freqs: &[u64; 256]) -> Result<Self> {
        let mut f: Vec<u64> = freqs.to_vec();
        loop {
            let lengths = huffman_lengths(&f);
            if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
                let entries = (0..256).filter(|&s| lengths[s] > 0).map(|s| (s as u8, lengths[s])).collect();
                return Self::from_lengths(entries);
            }
            for v in f.iter_mut().filter(|v| **v > 0) {
                *v = (*v / 2).max(1);
            }
        }
    }

    pub fn from_lengths(mut entries: Vec<(u8, u8)>) -> Result<Self> {
        entries.sort_by_key(|&(s, l)| (l, s));
        let mut counts = [0u32; MAX_CODE_LEN as usize + 1];
        let mut seen = [false; 256];
        for &(s, l) in &entries {
            if l == 0 || l > MAX_CODE_LEN || std::mem::replace(&mut seen[s as usize], true) {
                return Err(Error::format(format!("invalid code length {l} for symbol {s}")));
            }
            counts[l as usize] += 1;
        }
        // Kraft inequality keeps the canonical assignment prefix-free.
        let kraft: u64 = entries.iter().map(|&(_, l)| 1u64 << (MAX_CODE_LEN - l)).sum();
        if kraft > 1u64 << MAX_CODE_LEN {
            return Err(Error::format("over-subscribed prefix code"));
        }
        let mut codes = vec![None; 256];
        let mut code = 0u32;
        let mut it = entries.iter().peekable();
        for len in 1..=MAX_CODE_LEN {
            while let Some(&&(s, l)) = it.peek() {
                if l != len {
                    break;
                }
                codes[s as usize] = Some((code, len));
                code += 1;
                it.next();
            }
            code <<= 1;
        }
        Ok(HuffmanTable {
            entries,
            codes,
            counts,
        })
    }

    pub fn entries(&self) -> &[(u8, u8)] {
        &self.entries
    }

    pub fn code(&self, symbol: u8) -> Option<(u32, u8)> {
        self.codes[symbol as usize]
    }

    fn write(&self, w: &mut BitWriter, symbol: u8) -> Result<()> {
        let (code, len) = self
            .code(symbol)
            .ok_or_else(|| Error::format(format!("symbol {symbol:#04x} missing from table")))?;
        w.push_bits(code, len as u32);
        Ok(())
    }

    fn read(&self, r: &mut BitReader) -> Result<u8> {
        let (mut code, mut first, mut index) = (0u32, 0u32, 0usize);
        for len in 1..=MAX_CODE_LEN as usize {
            code |= r.read_bit()? as u32;
            let count = self.counts[len];
            if code < first + count {
                return Ok(self.entries[index + (code - first) as usize].0);
            }
            index += count as usize;
            first = (first + count) << 1;
            code <<= 1;
        }
        Err(Error::format("invalid prefix code in bitstream"))
    }
}

fn huffman_lengths(freqs: &[u64]) -> Vec<u8> {
    let used: Vec<usize> = (0..freqs.len()).filter(|&s| freqs[s] > 0).collect();
    let mut lengths = vec![0u8; freqs.len()];
    match used.len() {
        0 => return lengths,
        1 => {
            lengths[used[0]] = 1;
            return lengths;
        }
        _ => {}
    }
    // Tree nodes: leaves first, then internal nodes; parent links give depths.
    let mut parent: Vec<usize> = vec![usize::MAX; used.len()];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = used.iter().enumerate().map(|(i, &s)| Reverse((freqs[s], i))).collect();
    while heap.len() > 1 {
        let Reverse((fa, a)) = heap.pop().expect("len > 1");
        let Reverse((fb, b)) = heap.pop().expect("len > 1");
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((fa + fb, id)));
    }
    for (i, &s) in used.iter().enumerate() {
        let mut d = 0u32;
        let mut n = i;
        while parent[n] != usize::MAX {
            n = parent[n];
            d += 1;
        }
        lengths[s] = d.min(255) as u8;
    }
    lengths
}

fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

fn magnitude_bits(v: i32, size: u32) -> u32 {
    if v >= 0 {
        v as u32
    } else {
        (v + (1 << size) - 1) as u32
    }
}

fn read_magnitude(r: &mut BitReader, size: u32) -> Result<i32> {
    if size == 0 {
        return Ok(0);
    }
    let raw = r.read_bits(size)? as i32;
    Ok(if raw < 1 << (size - 1) { raw - (1 << size) + 1 } else { raw })
}

struct Token {
    dc: bool,
    symbol: u8,
    value: i32,
    size: u32,
}

fn tokenize(planes: &[Vec<[i32; 64]>]) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    for blocks in planes {
        let mut prev_dc = 0;
        for b in blocks {
            if let Some(v) = b.iter().find(|v| v.abs() > MAX_MAGNITUDE) {
                return Err(Error::Domain(format!("coefficient {v} exceeds the codable range")));
            }
            let diff = b[0] - prev_dc;
            prev_dc = b[0];
            let size = category(diff);
            tokens.push(Token {
                dc: true,
                symbol: size as u8,
                value: diff,
                size,
            });
            let mut run = 0u8;
            let last = b.iter().rposition(|&v| v != 0).unwrap_or(0);
            for &v in b.iter().take(last + 1).skip(1) {
                if v == 0 {
                    run += 1;
                    continue;
                }
                while run >= 16 {
                    tokens.push(Token { dc: false, symbol: ZRL, value: 0, size: 0 });
                    run -= 16;
                }
                let size = category(v);
                tokens.push(Token {
                    dc: false,
                    symbol: (run << 4) | size as u8,
                    value: v,
                    size,
                });
                run = 0;
            }
            if last < 63 {
                tokens.push(Token { dc: false, symbol: EOB, value: 0, size: 0 });
            }
        }
    }
    Ok(tokens)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntropyCoded {
    pub dc: HuffmanTable,
    pub ac: HuffmanTable,
    pub payload: Vec<u8>,
    pub bit_len: usize,
}

pub fn encode_blocks(planes: &[Vec<[i32; 64]>]) -> Result<EntropyCoded> {
    let tokens = tokenize(planes)?;
    let mut dc_f = [0u64; 256];
    let mut ac_f = [0u64; 256];
    for t in &tokens {
        if t.dc {
            dc_f[t.symbol as usize] += 1;
        } else {
            ac_f[t.symbol as usize] += 1;
        }
    }
    let dc = HuffmanTable::from_frequencies(&dc_f)?;
    let ac = HuffmanTable::from_frequencies(&ac_f)?;
    let mut w = BitWriter::new();
    for t in &tokens {
        let table = if t.dc { &dc } else { &ac };
        table.write(&mut w, t.symbol)?;
        w.push_bits(magnitude_bits(t.value, t.size), t.size);
    }
    let bit_len = w.bit_len();
    Ok(EntropyCoded {
        dc,
        ac,
        payload: w.into_bytes(),
        bit_len,
    })
}

pub fn decode_blocks(coded: &EntropyCoded, planes: usize, blocks_per_plane: usize) -> Result<Vec<Vec<[i32; 64]>>> {
    let mut r = BitReader::new(&coded.payload, coded.bit_len)?;
    let mut out = Vec::with_capacity(planes);
    for _ in 0..planes {
        let mut prev_dc = 0i32;
        let mut blocks = Vec::with_capacity(blocks_per_plane);
        for _ in 0..blocks_per_plane {
            let mut b = [0i32; 64];
            let size = coded.dc.read(&mut r)? as u32;
            if size > 16 {
                return Err(Error::format(format!("DC category {size}")));
            }
            prev_dc = prev_dc
                .checked_add(read_magnitude(&mut r, size)?)
                .ok_or_else(|| Error::format("DC overflow"))?;
            b[0] = prev_dc;
            let mut k = 1;
            while k < 64 {
                let sym = coded.ac.read(&mut r)?;
                match sym {
                    EOB => break,
                    ZRL => k += 16,
                    _ => {
                        let (run, size) = ((sym >> 4) as usize, (sym & 0x0F) as u32);
                        if size == 0 {
                            return Err(Error::format(format!("invalid AC symbol {sym:#04x}")));
                        }
                        k += run;
                        if k > 63 {
                            return Err(Error::format("AC run past end of block"));
                        }
                        b[k] = read_magnitude(&mut r, size)?;
                        k += 1;
                    }
                }
            }
            if k > 64 {
                return Err(Error::format("AC run past end of block"));
            }
            blocks.push(b);
        }
        out.push(blocks);
    }
    if r.remaining() != 0 {
        return Err(Error::format(format!("{} trailing payload bits", r.remaining())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn canonical_codes_are_prefix_free() {
        let mut f = [0u64; 256];
        for (i, v) in [(1usize, 50u64), (2, 20), (3, 20), (7, 5), (9, 5), (200, 1)] {
            f[i] = v;
        }
        let t = HuffmanTable::from_frequencies(&f).unwrap();
        let codes: Vec<(u32, u8)> = t.entries().iter().map(|&(s, _)| t.code(s).unwrap()).collect();
        for (i, &(a, la)) in codes.iter().enumerate() {
            for &(b, lb) in &codes[i + 1..] {
                let l = la.min(lb);
                assert_ne!(a >> (la - l), b >> (lb - l));
            }
        }
        assert_eq!(t.code(1).unwrap().1, 1);
    }

    #[test]
    fn length_limit_applies() {
        // Fibonacci frequencies force a maximally skewed tree.
        let mut f = [0u64; 256];
        let (mut a, mut b) = (1u64, 1u64);
        for v in f.iter_mut().take(40) {
            *v = a;
            (a, b) = (b, a + b);
        }
        let t = HuffmanTable::from_frequencies(&f).unwrap();
        assert!(t.entries().iter().all(|&(_, l)| l <= MAX_CODE_LEN));
        assert_eq!(t.entries().len(), 40);
    }

    #[test]
    fn all_zero_blocks() {
        let planes = vec![vec![[0i32; 64]; 3]];
        let coded = encode_blocks(&planes).unwrap();
        assert_eq!(decode_blocks(&coded, 1, 3).unwrap(), planes);
    }

    #[test]
    fn long_zero_runs_and_full_blocks() {
        let mut b = [0i32; 64];
        b[0] = -700;
        b[40] = 3;
        b[63] = -1;
        let full: [i32; 64] = std::array::from_fn(|i| i as i32 - 32);
        let planes = vec![vec![b, full], vec![full, b]];
        let coded = encode_blocks(&planes).unwrap();
        assert_eq!(decode_blocks(&coded, 2, 2).unwrap(), planes);
    }

    #[test]
    fn truncation_is_an_error() {
        let planes = vec![vec![std::array::from_fn(|i| (i % 5) as i32 - 2); 4]];
        let mut coded = encode_blocks(&planes).unwrap();
        coded.bit_len -= 5;
        assert!(matches!(decode_blocks(&coded, 1, 4), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_random_grids(
            planes in proptest::collection::vec(
                proptest::collection::vec(
                    proptest::collection::vec(
                        prop_oneof![6 => Just(0i32), 3 => -20i32..20, 1 => -2000i32..2000],
                        64,
                    ),
                    1..6,
                ),
                1..4,
            )
        ) {
            let n = planes[0].len();
            let planes: Vec<Vec<[i32; 64]>> = planes
                .into_iter()
                .map(|p| {
                    let mut p: Vec<[i32; 64]> = p.into_iter().map(|b| b.try_into().unwrap()).collect();
                    p.resize(n, [0; 64]);
                    p
                })
                .collect();
            let coded = encode_blocks(&planes).unwrap();
            prop_assert_eq!(decode_blocks(&coded, planes.len(), n).unwrap(), planes);
        }
    }
}
