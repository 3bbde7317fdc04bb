//! `SWCKPT01` named-parameter container.
//!
//! Layout (all integers u64 little-endian): magic, entry count, then per
//! entry the name length, UTF-8 name, rank, extents, and the raw f32 LE data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SWCKPT01";

pub fn write_checkpoint<W: Write>(store: &ParamStore<f32>, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::format(format!("truncated checkpoint: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore<f32>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::format(format!("truncated checkpoint: {e}")))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format("not a SWCKPT01 checkpoint"));
    }
    let count = read_u64(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u64(&mut r)? as usize;
        if len > 4096 {
            return Err(Error::format(format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::format(format!("truncated name: {e}")))?;
        let name =
            String::from_utf8(name).map_err(|_| Error::format("parameter name is not UTF-8"))?;
        let rank = read_u64(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::format(format!("{name}: implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)
            .map_err(|e| Error::format(format!("{name}: truncated data: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(name, Tensor::new(&shape, data)?);
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    write_checkpoint(store, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Overwrites every entry of `target` from `loaded`; names and shapes must match.
pub fn load_into(target: &mut ParamStore<f32>, loaded: &ParamStore<f32>) -> Result<()> {
    for (name, t) in target.iter_mut() {
        let src = loaded.get(name).ok_or_else(|| Error::Load {
            name: name.to_string(),
            reason: "missing from checkpoint".into(),
        })?;
        if src.shape() != t.shape() {
            return Err(Error::Load {
                name: name.to_string(),
                reason: format!("shape {:?} in checkpoint, model expects {:?}", src.shape(), t.shape()),
            });
        }
        *t = src.clone();
    }
    Ok(())
}
