//! `SWSEP001` bitstream: header (shape, quantizer side information,
//! quality, padding, Huffman tables), MSB-first payload, CRC-32 trailer.

use super::dct::{self, padded_extent};
use super::entropy::{decode_blocks, encode_blocks, EntropyCoded, HuffmanTable};
use super::quantize::{ChannelRange, CodeGrid, QuantizerSpec};
use crate::error::{Error, Result};

pub const SEP_MAGIC: &[u8; 8] = b"SWSEP001";
const VERSION: u8 = 1;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format("bitstream truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn put_table(out: &mut Vec<u8>, t: &HuffmanTable) {
    out.extend_from_slice(&(t.entries().len() as u16).to_le_bytes());
    for &(s, l) in t.entries() {
        out.extend_from_slice(&[s, l]);
    }
}

fn get_table(c: &mut Cursor) -> Result<HuffmanTable> {
    let n = c.u16()? as usize;
    if n > 256 {
        return Err(Error::format(format!("{n} Huffman entries")));
    }
    let entries = (0..n).map(|_| Ok((c.u8()?, c.u8()?))).collect::<Result<Vec<_>>>()?;
    HuffmanTable::from_lengths(entries)
}

/// Compresses a quantized grid into a self-delimiting container.
pub fn encode_container(grid: &CodeGrid, spec: &QuantizerSpec, quality: u8) -> Result<Vec<u8>> {
    let table = dct::quant_table(quality)?;
    let dims = [grid.channels, grid.height, grid.width];
    if dims.iter().any(|&d| d == 0 || d > u16::MAX as usize) || spec.ranges.len() != grid.channels {
        return Err(Error::config(format!("cannot encode grid of shape {dims:?}")));
    }
    let plane = grid.height * grid.width;
    let planes: Vec<Vec<[i32; 64]>> = grid
        .codes
        .chunks(plane)
        .map(|p| dct::encode_plane(p, grid.height, grid.width, &table))
        .collect();
    let coded = encode_blocks(&planes)?;
    let mut out = Vec::with_capacity(64 + coded.payload.len());
    out.extend_from_slice(SEP_MAGIC);
    out.push(VERSION);
    for d in dims {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    out.push(spec.bits);
    out.push(quality);
    out.push((padded_extent(grid.height) - grid.height) as u8);
    out.push((padded_extent(grid.width) - grid.width) as u8);
    for r in &spec.ranges {
        out.extend_from_slice(&r.min.to_le_bytes());
        out.extend_from_slice(&r.max.to_le_bytes());
        out.push(r.degenerate as u8);
    }
    put_table(&mut out, &coded.dc);
    put_table(&mut out, &coded.ac);
    out.extend_from_slice(&(coded.bit_len as u32).to_le_bytes());
    out.extend_from_slice(&coded.payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedFrame {
    pub grid: CodeGrid,
    pub spec: QuantizerSpec,
    pub quality: u8,
}

pub fn decode_container(bytes: &[u8]) -> Result<DecodedFrame> {
    if bytes.len() < SEP_MAGIC.len() + 4 {
        return Err(Error::format("bitstream truncated"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(Error::format("checksum mismatch"));
    }
    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(8)? != SEP_MAGIC {
        return Err(Error::format("bad magic"));
    }
    if c.u8()? != VERSION {
        return Err(Error::format("unsupported version"));
    }
    let (channels, height, width) = (c.u16()? as usize, c.u16()? as usize, c.u16()? as usize);
    let bits = c.u8()?;
    let quality = c.u8()?;
    let (pad_h, pad_w) = (c.u8()? as usize, c.u8()? as usize);
    if bits != 8 || channels * height * width == 0 {
        return Err(Error::format("invalid header"));
    }
    if pad_h != padded_extent(height) - height || pad_w != padded_extent(width) - width {
        return Err(Error::format("padding does not match the plane extents"));
    }
    let table = dct::quant_table(quality).map_err(|_| Error::format(format!("quality {quality}")))?;
    let ranges = (0..channels)
        .map(|_| {
            Ok(ChannelRange {
                min: c.f32()?,
                max: c.f32()?,
                degenerate: c.u8()? != 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dc = get_table(&mut c)?;
    let ac = get_table(&mut c)?;
    let bit_len = c.u32()? as usize;
    let payload = c.take(bit_len.div_ceil(8))?.to_vec();
    if c.pos != body.len() {
        return Err(Error::format("trailing bytes after payload"));
    }
    let coded = EntropyCoded {
        dc,
        ac,
        payload,
        bit_len,
    };
    let per_plane = padded_extent(height) * padded_extent(width) / 64;
    let planes = decode_blocks(&coded, channels, per_plane)?;
    let mut codes = Vec::with_capacity(channels * height * width);
    for p in &planes {
        codes.extend(dct::decode_plane(p, height, width, &table)?);
    }
    Ok(DecodedFrame {
        grid: CodeGrid {
            channels,
            height,
            width,
            codes,
        },
        spec: QuantizerSpec { bits, ranges },
        quality,
    })
}
