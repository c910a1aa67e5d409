//! `STBK` basis dumps: magic, then `version, l_in, l_out, size, B` as
//! little-endian u32, then the basis tensor as little-endian f64.

use std::io::{Read, Write};

use crate::basis::sampling::KernelBasis;
use crate::error::{Error, Result};

pub const BASIS_MAGIC: &[u8; 4] = b"STBK";
pub const BASIS_VERSION: u32 = 1;

/// A basis read back from disk: shape header plus the raw samples.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisBlob {
    pub l_in: u32,
    pub l_out: u32,
    pub size: u32,
    pub count: u32,
    pub data: Vec<f64>,
}

impl From<&KernelBasis> for BasisBlob {
    fn from(kb: &KernelBasis) -> Self {
        Self {
            l_in: kb.l_in as u32,
            l_out: kb.l_out as u32,
            size: kb.size as u32,
            count: kb.len() as u32,
            data: kb.data.clone(),
        }
    }
}

impl BasisBlob {
    fn expected_len(&self) -> usize {
        let s = self.size as usize;
        self.count as usize * (2 * self.l_out as usize + 1) * (2 * self.l_in as usize + 1) * s * s * s
    }
}

pub fn write_basis<W: Write>(kb: &KernelBasis, mut w: W) -> Result<()> {
    w.write_all(BASIS_MAGIC)?;
    for v in [BASIS_VERSION, kb.l_in as u32, kb.l_out as u32, kb.size as u32, kb.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &kb.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_basis<R: Read>(mut r: R) -> Result<BasisBlob> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated STBK header".into()))?;
    if &magic != BASIS_MAGIC {
        return Err(Error::Format("not a STBK file".into()));
    }
    let mut words = [0u32; 5];
    for w in words.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| Error::Format("truncated STBK header".into()))?;
        *w = u32::from_le_bytes(b);
    }
    if words[0] != BASIS_VERSION {
        return Err(Error::Format(format!("unsupported STBK version {}", words[0])));
    }
    let mut blob = BasisBlob { l_in: words[1], l_out: words[2], size: words[3], count: words[4], data: Vec::new() };
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != blob.expected_len() * 8 {
        return Err(Error::Format(format!(
            "STBK payload has {} bytes, header implies {}",
            payload.len(),
            blob.expected_len() * 8
        )));
    }
    blob.data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(blob)
}
