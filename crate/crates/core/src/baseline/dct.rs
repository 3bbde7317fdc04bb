//! 8×8 block DCT stage: level shift, orthonormal DCT-II, quality-scaled
//! quantization tables and zigzag ordering.

use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const BLOCK: usize = 8;

/// Standard JPEG luminance table in natural (row-major) order.
const BASE_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Zigzag position → natural index.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21,
    28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61,
    54, 47, 55, 62, 63,
];

/// IJG quality scaling of the base table, entries clamped to 1..=255.
pub fn quant_table(quality: u8) -> Result<[u16; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::config(format!("quality {quality} outside 1..=100")));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    Ok(BASE_TABLE.map(|b| ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16))
}

fn cos_table() -> &'static [[f64; BLOCK]; BLOCK] {
    static T: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    T.get_or_init(|| {
        let mut t = [[0.0; BLOCK]; BLOCK];
        for (k, row) in t.iter_mut().enumerate() {
            let a = if k == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * BLOCK) as f64).cos();
            }
        }
        t
    })
}

/// Orthonormal 2-D DCT-II of a natural-order block.
pub fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let c = cos_table();
    let mut tmp = [0.0; 64];
    for y in 0..BLOCK {
        for k in 0..BLOCK {
            tmp[y * BLOCK + k] = (0..BLOCK).map(|x| c[k][x] * block[y * BLOCK + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for k in 0..BLOCK {
        for u in 0..BLOCK {
            out[k * BLOCK + u] = (0..BLOCK).map(|y| c[k][y] * tmp[y * BLOCK + u]).sum();
        }
    }
    out
}

pub fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let c = cos_table();
    let mut tmp = [0.0; 64];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            tmp[y * BLOCK + u] = (0..BLOCK).map(|k| c[k][y] * coef[k * BLOCK + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y * BLOCK + x] = (0..BLOCK).map(|u| c[u][x] * tmp[y * BLOCK + u]).sum();
        }
    }
    out
}

/// Mirror index without edge repetition (…2 1 | 0 1 2 … n-1 | n-2 …).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

pub fn padded_extent(n: usize) -> usize {
    n.div_ceil(BLOCK) * BLOCK
}

/// Quantized zigzag-ordered coefficients of every block of one plane.
pub fn encode_plane(plane: &[u8], height: usize, width: usize, table: &[u16; 64]) -> Vec<[i32; 64]> {
    let (ph, pw) = (padded_extent(height), padded_extent(width));
    let mut blocks = Vec::with_capacity(ph * pw / 64);
    for by in (0..ph).step_by(BLOCK) {
        for bx in (0..pw).step_by(BLOCK) {
            let mut b = [0.0f64; 64];
            for y in 0..BLOCK {
                let sy = reflect(by + y, height);
                for x in 0..BLOCK {
                    let sx = reflect(bx + x, width);
                    b[y * BLOCK + x] = plane[sy * width + sx] as f64 - 128.0;
                }
            }
            let c = fdct(&b);
            let mut z = [0i32; 64];
            for (zi, &nat) in ZIGZAG.iter().enumerate() {
                z[zi] = (c[nat] / table[nat] as f64).round() as i32;
            }
            blocks.push(z);
        }
    }
    blocks
}

pub fn decode_plane(blocks: &[[i32; 64]], height: usize, width: usize, table: &[u16; 64]) -> Result<Vec<u8>> {
    let (ph, pw) = (padded_extent(height), padded_extent(width));
    if blocks.len() != ph * pw / 64 {
        return Err(Error::format(format!(
            "{} blocks for a {height}x{width} plane",
            blocks.len()
        )));
    }
    let mut out = vec![0u8; height * width];
    let per_row = pw / BLOCK;
    for (i, z) in blocks.iter().enumerate() {
        let mut c = [0.0f64; 64];
        for (zi, &nat) in ZIGZAG.iter().enumerate() {
            c[nat] = z[zi] as f64 * table[nat] as f64;
        }
        let px = idct(&c);
        let (by, bx) = ((i / per_row) * BLOCK, (i % per_row) * BLOCK);
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                let (yy, xx) = (by + y, bx + x);
                if yy < height && xx < width {
                    out[yy * width + xx] = (px[y * BLOCK + x] + 128.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_block_has_only_dc() {
        let c = fdct(&[37.0; 64]);
        assert!((c[0] - 37.0 * 8.0).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn dct_inverts() {
        let b: [f64; 64] = std::array::from_fn(|i| ((i * 37) % 101) as f64 - 50.0);
        let back = idct(&fdct(&b));
        assert!(b.iter().zip(&back).all(|(a, c)| (a - c).abs() < 1e-9));
    }

    #[test]
    fn zigzag_is_a_permutation() {
        let mut seen = [false; 64];
        ZIGZAG.iter().for_each(|&i| seen[i] = true);
        assert!(seen.iter().all(|&s| s));
        assert_eq!(&ZIGZAG[..6], &[0, 1, 8, 16, 9, 2]);
    }

    #[test]
    fn tables() {
        assert_eq!(quant_table(50).unwrap(), BASE_TABLE);
        assert!(quant_table(100).unwrap().iter().all(|&q| q == 1));
        assert!(quant_table(0).is_err() && quant_table(101).is_err());
    }

    #[test]
    fn reflect_padding() {
        assert_eq!((0..8).map(|i| reflect(i, 5)).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(padded_extent(12), 16);
        let plane: Vec<u8> = (0..12 * 5).map(|i| (i * 4) as u8).collect();
        let t = quant_table(100).unwrap();
        let blocks = encode_plane(&plane, 12, 5, &t);
        assert_eq!(blocks.len(), 2);
        let back = decode_plane(&blocks, 12, 5, &t).unwrap();
        assert!(plane.iter().zip(&back).all(|(a, b)| a.abs_diff(*b) <= 1));
    }
}
