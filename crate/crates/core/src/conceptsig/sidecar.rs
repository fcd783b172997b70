//! Mask sidecar format, magic `CLRM`: the shared mask stored next to an
//! autoencoder checkpoint. Only `m_shared` is persisted — the specificity
//! mask is its exact complement and is rebuilt on read.
//!
//! Little-endian layout: magic (4 bytes), version u32, d_sae u32, then
//! d_sae f64 shared-mask entries.

use std::path::Path;

use crate::actstore::format::{atomic_write, Reader};
use crate::conceptsig::ConceptMasks;
use crate::error::{ClearError, Result};

pub const MAGIC: &[u8; 4] = b"CLRM";
pub const VERSION: u32 = 1;

pub fn write_masks(masks: &ConceptMasks, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(masks.d_sae() as u32).to_le_bytes());
    for &v in masks.m_shared() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn read_masks(path: &Path) -> Result<ConceptMasks> {
    let buf = std::fs::read(path).map_err(|e| ClearError::io(path.display().to_string(), e))?;
    let mut r = Reader::new(path, &buf);

    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(r.format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let d_sae = r.u32("d_sae")? as usize;
    if d_sae == 0 {
        return Err(r.format("d_sae must be positive".into()));
    }
    let start = r.pos;
    let m_shared = r.f64s(d_sae, "shared mask")?;
    if let Some(k) = m_shared.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(r.corrupt_at(
            (start + k * 8) as u64,
            format!("mask entry {} outside [0,1]", m_shared[k]),
        ));
    }
    if r.remaining() != 0 {
        return Err(r.corrupt_at(
            r.pos as u64,
            format!("{} trailing bytes after mask payload", r.remaining()),
        ));
    }
    ConceptMasks::from_shared(m_shared)
}
