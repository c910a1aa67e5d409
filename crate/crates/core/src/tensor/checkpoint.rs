//! Named parameter storage and the STRG checkpoint format.
//!
//! Layout (little endian): magic `STRG`, u32 version, u32 entry count, then
//! per entry u32 name length, name bytes, u32 rank, u32 extents, f64 payload.
//! Metadata travels as empty rank-1 entries named `#key=value`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STRG";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered, uniquely named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if name.starts_with('#') || self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Shape(format!("duplicate or reserved parameter name {name:?}")));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Puts every parameter on `tape` as a trainable leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.entries.iter().map(|(_, t)| tape.param(t.clone())).collect();
        let index = self.entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        BoundParams { vars, index }
    }

    /// Like [`bind`](Self::bind) but as constants, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.entries.iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let index = self.entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        BoundParams { vars, index }
    }

    /// Hash of names and shapes only.
    pub fn structure_hash(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in &self.entries {
            h.update(n.as_bytes());
            h.update([0]);
            for e in t.shape() {
                h.update((*e as u64).to_le_bytes());
            }
            h.update([0xff]);
        }
        format!("{:x}", h.finalize())
    }

    /// Overwrites values from `other`, which must have identical structure.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.structure_hash() != other.structure_hash() {
            return Err(Error::Format("checkpoint parameters do not match the model structure".into()));
        }
        self.entries.clone_from(&other.entries);
        Ok(())
    }
}

/// Tape handles of a [`ParamStore`], addressable by name.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index.get(name).map(|&i| self.vars[i]).ok_or_else(|| Error::Runtime(format!("unknown parameter {name:?}")))
    }

    /// Handles in store order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub meta: BTreeMap<String, String>,
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_entry(w: &mut impl Write, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    put_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    put_u32(w, shape.len())?;
    for e in shape {
        put_u32(w, *e)?;
    }
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_checkpoint(ck: &Checkpoint, mut w: impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut w, CHECKPOINT_VERSION as usize)?;
    put_u32(&mut w, ck.params.len() + ck.meta.len())?;
    for (k, v) in &ck.meta {
        if k.contains('=') {
            return Err(Error::Format(format!("metadata key {k:?} contains '='")));
        }
        put_entry(&mut w, &format!("#{k}={v}"), &[0], &[])?;
    }
    for (n, t) in ck.params.iter() {
        put_entry(&mut w, n, t.shape(), t.data())?;
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(take::<4>(r)?) as usize)
}

pub fn load_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    if &take::<4>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a STRG file".into()));
    }
    let version = get_u32(&mut r)?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = get_u32(&mut r)?;
    let mut ck = Checkpoint::default();
    for _ in 0..count {
        let len = get_u32(&mut r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = get_u32(&mut r)?;
        let shape = (0..rank).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(take::<8>(&mut r)?));
        }
        if let Some(kv) = name.strip_prefix('#') {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Format(format!("bad metadata entry {name:?}")))?;
            ck.meta.insert(k.to_string(), v.to_string());
        } else {
            ck.params.insert(name, Tensor::new(shape, data)?)?;
        }
    }
    Ok(ck)
}
