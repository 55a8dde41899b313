//! `ECVT` checkpoint files.
//!
//! Layout (little-endian): magic `ECVT`, `u32` version, then per tensor until
//! end of file: `u32` name length, UTF-8 name, `u32` rank, `u64` per dim,
//! raw `f32` data.

use std::io::{Read, Write};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::ModelParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ECVT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(params: &ModelParams<T>, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, t) in &params.tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * t.numel());
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::format(format!("checkpoint truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4, what)?.try_into().expect("4 bytes")))
}

/// Reads every tensor of a checkpoint, in file order.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<IndexMap<String, Tensor<f32>>> {
    let mut all = Vec::new();
    input.read_to_end(&mut all)?;
    let mut bytes = all.as_slice();
    if take(&mut bytes, 4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format("not an ECVT checkpoint (bad magic)"));
    }
    let version = take_u32(&mut bytes, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let mut out = IndexMap::new();
    while !bytes.is_empty() {
        let len = take_u32(&mut bytes, "name length")? as usize;
        let name = std::str::from_utf8(take(&mut bytes, len, "name")?)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?
            .to_string();
        let rank = take_u32(&mut bytes, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(take(&mut bytes, 8, "dims")?.try_into().expect("8 bytes"));
            shape.push(d as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut bytes, 4 * numel, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(format!("tensor `{name}`: {e}")))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::format(format!("duplicate tensor `{name}`")));
        }
    }
    Ok(out)
}
