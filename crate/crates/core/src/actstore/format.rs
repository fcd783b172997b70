//! On-disk activation format, magic `CLRA`.
//!
//! Little-endian layout:
//!
//! ```text
//! "CLRA"                      4 bytes
//! version                     u32 (currently 1)
//! L, B, T, d_model            4 × u32
//! labels                      B bytes (0 = negative, 1 = positive, 2 = control)
//! padding                     to the next 8-byte boundary
//! slabs                       L × B·T·d_model f64, (instance, token, channel) order
//! metadata (optional)         u32 length + UTF-8 JSON
//! ```
//!
//! Writes go through a temp file in the same directory plus an atomic
//! rename. Reads distinguish "not our file" ([`ClearError::Format`]: bad
//! magic or version) from "our file, damaged" ([`ClearError::Corrupt`]:
//! truncation, bad label bytes, non-finite values, unparseable metadata),
//! the latter carrying the byte offset where the damage was found.

use std::path::{Path, PathBuf};

use crate::actstore::{Label, LayeredActivations, PlantMetadata};
use crate::error::{ClearError, Result};
use crate::numkit::Matrix;

pub const MAGIC: &[u8; 4] = b"CLRA";
pub const VERSION: u32 = 1;

/// What a successful write reports back.
#[derive(Debug, Clone)]
pub struct ActivationFile {
    pub path: PathBuf,
    pub num_layers: u32,
    pub batch: u32,
    pub tokens: u32,
    pub d_model: u32,
    pub bytes: u64,
}

pub fn write_activations(acts: &LayeredActivations, path: &Path) -> Result<ActivationFile> {
    let (l, b, t, d) = (
        acts.num_layers(),
        acts.batch(),
        acts.tokens(),
        acts.d_model(),
    );
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [l, b, t, d] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for label in acts.labels() {
        buf.push(label.to_byte());
    }
    while buf.len() % 8 != 0 {
        buf.push(0);
    }
    for layer in acts.layers() {
        for &v in layer.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(meta) = &acts.metadata {
        let json = serde_json::to_vec(meta)
            .map_err(|e| ClearError::Config(format!("metadata not serializable: {e}")))?;
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
    }
    atomic_write(path, &buf)?;
    Ok(ActivationFile {
        path: path.to_path_buf(),
        num_layers: l as u32,
        batch: b as u32,
        tokens: t as u32,
        d_model: d as u32,
        bytes: buf.len() as u64,
    })
}

pub fn read_activations(path: &Path) -> Result<LayeredActivations> {
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
    let l = r.u32("num_layers")? as usize;
    let b = r.u32("batch")? as usize;
    let t = r.u32("tokens")? as usize;
    let d = r.u32("d_model")? as usize;
    if l == 0 || b == 0 || t == 0 || d == 0 {
        return Err(r.format(format!("degenerate dimensions L={l} B={b} T={t} d={d}")));
    }

    let label_off = r.pos;
    let label_bytes = r.take(b, "labels")?.to_vec();
    let mut labels = Vec::with_capacity(b);
    for (i, &lb) in label_bytes.iter().enumerate() {
        match Label::from_byte(lb) {
            Some(lab) => labels.push(lab),
            None => {
                return Err(r.corrupt_at(
                    (label_off + i) as u64,
                    format!("invalid label byte {lb}"),
                ))
            }
        }
    }
    while r.pos % 8 != 0 {
        r.take(1, "padding")?;
    }

    let rows = b * t;
    let mut layers = Vec::with_capacity(l);
    for layer in 0..l {
        let mut data = Vec::with_capacity(rows * d);
        let start = r.pos;
        let raw = r.take(rows * d * 8, "slab data")?;
        for (k, chunk) in raw.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(r.corrupt_at(
                    (start + k * 8) as u64,
                    format!("non-finite value {v} in layer {layer}"),
                ));
            }
            data.push(v);
        }
        layers.push(Matrix::from_vec(rows, d, data)?);
    }

    let metadata = if r.remaining() == 0 {
        None
    } else {
        let meta_off = r.pos;
        let len = r.u32("metadata length")? as usize;
        let raw = r.take(len, "metadata JSON")?;
        let meta: PlantMetadata = serde_json::from_slice(raw).map_err(|e| {
            ClearError::Corrupt {
                path: path.display().to_string(),
                offset: meta_off as u64,
                detail: format!("metadata JSON unparseable: {e}"),
            }
        })?;
        if r.remaining() != 0 {
            return Err(r.corrupt_at(
                r.pos as u64,
                format!("{} trailing bytes after metadata", r.remaining()),
            ));
        }
        Some(meta)
    };

    LayeredActivations::new(layers, labels, t, metadata)
}

/// Cursor over a byte buffer that reports truncation with the offset where
/// the bytes ran out. Shared by all three binary formats in this crate.
pub(crate) struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(path: &'a Path, buf: &'a [u8]) -> Self {
        Reader { path, buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(ClearError::Corrupt {
                path: self.path.display().to_string(),
                offset: self.buf.len() as u64,
                detail: format!(
                    "truncated: needed {n} bytes for {what} at offset {}, file ends at {}",
                    self.pos,
                    self.buf.len()
                ),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let raw = self.take(4, what)?;
        Ok(u32::from_le_bytes(raw.try_into().unwrap()))
    }

    /// `n` f64 values, rejecting non-finite entries with their offset.
    pub(crate) fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let raw = self.take(n * 8, what)?;
        let mut out = Vec::with_capacity(n);
        for (k, chunk) in raw.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(self.corrupt_at(
                    (start + k * 8) as u64,
                    format!("non-finite value {v} in {what}"),
                ));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub(crate) fn format(&self, detail: String) -> ClearError {
        ClearError::Format {
            path: self.path.display().to_string(),
            detail,
        }
    }

    pub(crate) fn corrupt_at(&self, offset: u64, detail: String) -> ClearError {
        ClearError::Corrupt {
            path: self.path.display().to_string(),
            offset,
            detail,
        }
    }
}

/// Writes via a sibling temp file and rename, so readers never observe a
/// half-written file.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| ClearError::io(&display, e))?;
        }
    }
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes).map_err(|e| ClearError::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| ClearError::io(&display, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actstore::{generate_planted, tests::test_spec};
    use crate::numkit::RngStream;

    fn sample() -> LayeredActivations {
        let spec = test_spec(4, 6, 3, 8);
        generate_planted(&spec, &mut RngStream::new(21, 0)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acts.clra");
        let acts = sample();
        write_activations(&acts, &path).unwrap();
        let back = read_activations(&path).unwrap();
        assert_eq!(acts, back);
        // Bit-level: a second write of the reread data is byte-identical.
        let path2 = dir.path().join("acts2.clra");
        write_activations(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.clra");
        let acts = sample();
        write_activations(&acts, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_activations(&path),
            Err(ClearError::Format { .. })
        ));
    }

    #[test]
    fn bad_version_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vers.clra");
        write_activations(&sample(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_activations(&path),
            Err(ClearError::Format { .. })
        ));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.clra");
        write_activations(&sample(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Cut inside the third slab: header claims 4 layers, payload has
        // fewer.
        let cut = bytes.len() - 6 * 3 * 8 * 8 - 100;
        std::fs::write(&path, &bytes[..cut]).unwrap();
        match read_activations(&path) {
            Err(ClearError::Corrupt { offset, .. }) => {
                assert_eq!(offset, cut as u64);
            }
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_label_byte_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("label.clra");
        write_activations(&sample(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[24 + 2] = 7; // third label byte
        std::fs::write(&path, &bytes).unwrap();
        match read_activations(&path) {
            Err(ClearError::Corrupt { offset, .. }) => assert_eq!(offset, 26),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.clra");
        write_activations(&sample(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // First f64 of the first slab lives right after the padded header.
        let header = 24 + 6;
        let start = header + (8 - header % 8);
        bytes[start..start + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_activations(&path),
            Err(ClearError::Corrupt { .. })
        ));
    }

    #[test]
    fn metadata_survives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.clra");
        let acts = sample();
        write_activations(&acts, &path).unwrap();
        let back = read_activations(&path).unwrap();
        let meta = back.metadata.expect("metadata present");
        let orig = acts.metadata.unwrap();
        assert_eq!(meta, orig);
        assert_eq!(meta.planted_layer, orig.spec.planted_layer());
    }

    #[test]
    fn file_without_metadata_reads_back_none() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.clra");
        let mut acts = sample();
        acts.metadata = None;
        write_activations(&acts, &path).unwrap();
        assert!(read_activations(&path).unwrap().metadata.is_none());
    }
}
