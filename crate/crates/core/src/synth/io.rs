//! `SVOL` volume files: magic, `u32` version, `u8` dtype, `3 × u32` extents
//! `(D, H, W)`, `3 × f64` spacing in mm, then a little-endian row-major
//! payload. Vector fields are stored voxel-interleaved, `[D, H, W, 3]`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{ImageVolume, LabelVolume, Volume};

pub const SVOL_MAGIC: &[u8; 4] = b"SVOL";
pub const SVOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum SvolData {
    Intensity(Vec<f64>),
    Labels(Vec<i32>),
    /// Component-major `[3, D, H, W]` in memory.
    Field(Vec<f64>),
}

impl SvolData {
    fn dtype(&self) -> u8 {
        match self {
            SvolData::Intensity(_) => 0,
            SvolData::Labels(_) => 1,
            SvolData::Field(_) => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvolFile {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub data: SvolData,
}

impl SvolFile {
    pub fn intensity(v: &ImageVolume) -> Self {
        Self { dims: v.dims, spacing: v.spacing, data: SvolData::Intensity(v.data.clone()) }
    }

    pub fn labels(v: &LabelVolume) -> Self {
        Self { dims: v.dims, spacing: v.spacing, data: SvolData::Labels(v.data.clone()) }
    }

    pub fn field(dims: [usize; 3], spacing: [f64; 3], u: &[f64]) -> Self {
        Self { dims, spacing, data: SvolData::Field(u.to_vec()) }
    }

    pub fn into_intensity(self) -> Result<ImageVolume> {
        match self.data {
            SvolData::Intensity(d) => Volume::with_spacing(self.dims, self.spacing, d),
            _ => Err(Error::Format("SVOL file does not hold an intensity volume".into())),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self.data {
            SvolData::Labels(d) => Volume::with_spacing(self.dims, self.spacing, d),
            _ => Err(Error::Format("SVOL file does not hold a label volume".into())),
        }
    }

    pub fn into_field(self) -> Result<Vec<f64>> {
        match self.data {
            SvolData::Field(d) => Ok(d),
            _ => Err(Error::Format("SVOL file does not hold a vector field".into())),
        }
    }
}

pub fn write_volume<W: Write>(f: &SvolFile, mut w: W) -> Result<()> {
    let vol: usize = f.dims.iter().product();
    let expected = match f.data {
        SvolData::Field(_) => 3 * vol,
        _ => vol,
    };
    let len = match &f.data {
        SvolData::Intensity(d) | SvolData::Field(d) => d.len(),
        SvolData::Labels(d) => d.len(),
    };
    if len != expected {
        return Err(Error::Shape(format!("SVOL {:?} needs {expected} values, got {len}", f.dims)));
    }
    let mut buf = Vec::with_capacity(45 + 8 * expected);
    buf.extend_from_slice(SVOL_MAGIC);
    buf.extend_from_slice(&SVOL_VERSION.to_le_bytes());
    buf.push(f.data.dtype());
    for &e in &f.dims {
        let e = u32::try_from(e).map_err(|_| Error::Format(format!("extent {e} too large")))?;
        buf.extend_from_slice(&e.to_le_bytes());
    }
    for s in f.spacing {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    match &f.data {
        SvolData::Intensity(d) => d.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
        SvolData::Labels(d) => d.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
        SvolData::Field(d) => {
            for p in 0..vol {
                for c in 0..3 {
                    buf.extend_from_slice(&d[c * vol + p].to_le_bytes());
                }
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take<'a>(buf: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format(format!("truncated SVOL {what}")));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

pub fn read_volume<R: Read>(mut r: R) -> Result<SvolFile> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    let mut buf = all.as_slice();
    if buf.len() < 4 || &buf[..4] != SVOL_MAGIC {
        return Err(Error::Format("not a SVOL file".into()));
    }
    take(&mut buf, 4, "header")?;
    let version = u32::from_le_bytes(take(&mut buf, 4, "header")?.try_into().unwrap());
    if version != SVOL_VERSION {
        return Err(Error::Format(format!("unsupported SVOL version {version}")));
    }
    let dtype = take(&mut buf, 1, "header")?[0];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(&mut buf, 4, "header")?.try_into().unwrap()) as usize;
    }
    let mut spacing = [0.0; 3];
    for s in &mut spacing {
        *s = f64::from_le_bytes(take(&mut buf, 8, "header")?.try_into().unwrap());
    }
    let vol = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let (count, width) = match dtype {
        0 => (vol, 8),
        1 => (vol, 4),
        2 => (vol.and_then(|v| v.checked_mul(3)), 8),
        other => return Err(Error::Format(format!("unknown SVOL dtype {other}"))),
    };
    let count = count.ok_or_else(|| Error::Format(format!("SVOL extents {dims:?} overflow")))?;
    if count.checked_mul(width) != Some(buf.len()) {
        return Err(Error::Format(format!(
            "SVOL payload has {} bytes, extents {dims:?} imply {}",
            buf.len(),
            count.saturating_mul(width)
        )));
    }
    let data = match dtype {
        0 => SvolData::Intensity(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        1 => SvolData::Labels(buf.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
        _ => {
            let vol = count / 3;
            let mut d = vec![0.0; count];
            for (i, c) in buf.chunks_exact(8).enumerate() {
                d[(i % 3) * vol + i / 3] = f64::from_le_bytes(c.try_into().unwrap());
            }
            SvolData::Field(d)
        }
    };
    Ok(SvolFile { dims, spacing, data })
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_volume(path: &Path, f: &SvolFile) -> Result<()> {
    let mut buf = Vec::new();
    write_volume(f, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_volume(path: &Path) -> Result<SvolFile> {
    read_volume(std::fs::File::open(path)?)
}
