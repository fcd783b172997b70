//! Autoencoder checkpoint format, magic `CLRS`: header (`version`,
//! `d_model`, `d_sae` as little-endian u32), then `W_enc`, `b_enc`, `W_dec`
//! as f64 in that order.

use std::path::Path;

use crate::actstore::format::{atomic_write, Reader};
use crate::error::{ClearError, Result};
use crate::numkit::Matrix;
use crate::sae::SparseAutoencoder;

pub const MAGIC: &[u8; 4] = b"CLRS";
pub const VERSION: u32 = 1;

pub fn write_sae(sae: &SparseAutoencoder, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(sae.d_model() as u32).to_le_bytes());
    buf.extend_from_slice(&(sae.d_sae() as u32).to_le_bytes());
    for &v in sae
        .w_enc()
        .data()
        .iter()
        .chain(sae.b_enc())
        .chain(sae.w_dec().data())
    {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn read_sae(path: &Path) -> Result<SparseAutoencoder> {
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
    let d_model = r.u32("d_model")? as usize;
    let d_sae = r.u32("d_sae")? as usize;
    if d_model == 0 || d_sae < d_model {
        return Err(r.format(format!(
            "invalid dimensions d_model={d_model}, d_sae={d_sae}"
        )));
    }
    let w_enc = Matrix::from_vec(d_sae, d_model, r.f64s(d_sae * d_model, "W_enc")?)?;
    let b_enc = r.f64s(d_sae, "b_enc")?;
    let w_dec = Matrix::from_vec(d_model, d_sae, r.f64s(d_model * d_sae, "W_dec")?)?;
    if r.remaining() != 0 {
        return Err(r.corrupt_at(
            r.pos as u64,
            format!("{} trailing bytes after W_dec", r.remaining()),
        ));
    }
    SparseAutoencoder::new(w_enc, b_enc, w_dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sae.clrs");
        let sae = SparseAutoencoder::init(6, 12, &mut RngStream::new(31, 0)).unwrap();
        write_sae(&sae, &path).unwrap();
        let back = read_sae(&path).unwrap();
        assert_eq!(sae, back);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sae.clrs");
        let sae = SparseAutoencoder::init(4, 8, &mut RngStream::new(32, 0)).unwrap();
        write_sae(&sae, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'Z';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_sae(&path), Err(ClearError::Format { .. })));
    }

    #[test]
    fn truncation_is_a_corruption_error_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sae.clrs");
        let sae = SparseAutoencoder::init(4, 8, &mut RngStream::new(33, 0)).unwrap();
        write_sae(&sae, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        match read_sae(&path) {
            Err(ClearError::Corrupt { offset, .. }) => {
                assert_eq!(offset, (bytes.len() - 9) as u64)
            }
            other => panic!("expected corruption error, got {other:?}"),
        }
    }
}
