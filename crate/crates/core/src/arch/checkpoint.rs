//! Flat binary weight files.
//!
//! Layout: the 5-byte magic `FDPT1`, then one record per parameter in
//! construction order until end of file:
//!
//! ```text
//! u64 LE   name length in bytes
//! [u8]     UTF-8 name
//! 4 x u64  extents (batch, channels, height, width), LE
//! f64 LE   values, row-major
//! ```

use std::fs;
use std::path::Path;

use super::network::Network;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 5] = b"FDPT1";

pub fn encode(params: &ParamStore) -> Vec<u8> {
    let size: usize = params.iter().map(|p| 8 + p.name.len() + 32 + 8 * p.value.numel()).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + size);
    out.extend_from_slice(MAGIC);
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        for e in p.value.shape().0 {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                "checkpoint",
                format!("truncated {what} at byte {} (need {n}, have {})", self.pos, self.bytes.len() - self.pos),
            )
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("checkpoint", "missing FDPT1 magic"));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut store = ParamStore::new();
    while r.remaining() > 0 {
        let name_len = r.u64("name length")?;
        let name_len = usize::try_from(name_len).map_err(|_| Error::format("checkpoint", "name length overflows"))?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|e| Error::format("checkpoint", format!("parameter name is not UTF-8: {e}")))?
            .to_owned();
        let mut extents = [0usize; 4];
        for e in &mut extents {
            *e = usize::try_from(r.u64("extent")?).map_err(|_| Error::format("checkpoint", "extent overflows"))?;
        }
        let count = extents
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::format("checkpoint", format!("values of {name} extend past end of file")))?;
        let raw = r.take(count * 8, "values")?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        store.push(name, Tensor::new(Shape(extents), values)?);
    }
    Ok(store)
}

pub fn save(path: &Path, params: &ParamStore) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl Network {
    /// Replaces the weights with `loaded`, which must list exactly this
    /// network's parameters, with equal names and shapes, in order.
    pub fn load_params(&mut self, loaded: ParamStore) -> Result<()> {
        let own = self.params();
        if loaded.len() != own.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} parameters for a network with {}", loaded.len(), own.len()),
            ));
        }
        for (a, b) in own.iter().zip(loaded.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("expected {} {}, found {} {}", a.name, a.value.shape(), b.name, b.value.shape()),
                ));
            }
        }
        *self.params_mut() = loaded;
        Ok(())
    }
}
