//! Shared binary container: a magic string, a JSON header, and a flat
//! little-endian f64 payload. Datasets and checkpoints both use it.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"MMRLAB1\n";

/// Write magic, header length (u64 LE), header JSON, then the payload as
/// raw little-endian f64. Serialization of the header follows the struct's
/// field order, so output bytes are deterministic.
pub fn write_blob_file<H: Serialize>(path: &Path, header: &H, payload: &[f64]) -> Result<()> {
    let header_json = serde_json::to_vec(header)
        .map_err(|e| LabError::format(path.display().to_string(), e.to_string()))?;
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| LabError::io(path.display().to_string(), e))?,
    );
    let io_err = |e: std::io::Error| LabError::io(path.display().to_string(), e);
    file.write_all(MAGIC).map_err(io_err)?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    file.write_all(&header_json).map_err(io_err)?;
    let mut buf = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf).map_err(io_err)?;
    file.flush().map_err(io_err)?;
    Ok(())
}

/// Read a blob file back. The payload length must be a whole number of f64.
pub fn read_blob_file<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let display = path.display().to_string();
    let mut file =
        std::fs::File::open(path).map_err(|e| LabError::io(display.clone(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| LabError::io(display.clone(), e))?;
    if bytes.len() < MAGIC.len() + 8 {
        return Err(LabError::format(display, "file shorter than its header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(LabError::format(display, "bad magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_start = 16usize
        .checked_add(header_len)
        .ok_or_else(|| LabError::format(display.clone(), "header length overflow"))?;
    if bytes.len() < body_start {
        return Err(LabError::format(display, "truncated header"));
    }
    let header: H = serde_json::from_slice(&bytes[16..body_start])
        .map_err(|e| LabError::format(display.clone(), e.to_string()))?;
    let body = &bytes[body_start..];
    if body.len() % 8 != 0 {
        return Err(LabError::format(display, "payload is not whole f64 words"));
    }
    let payload: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct H {
        kind: String,
        n: usize,
    }

    #[test]
    fn roundtrip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let payload = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300];
        let header = H {
            kind: "x".into(),
            n: 4,
        };
        write_blob_file(&path, &header, &payload).unwrap();
        let (h2, p2): (H, Vec<f64>) = read_blob_file(&path).unwrap();
        assert_eq!(h2, header);
        assert_eq!(p2.len(), payload.len());
        for (a, b) in payload.iter().zip(&p2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        std::fs::write(&path, b"NOTMAGIC\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = read_blob_file::<H>(&path).unwrap_err();
        assert!(matches!(err, LabError::Format { .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(1000u64).to_le_bytes());
        bytes.extend_from_slice(b"{}");
        std::fs::write(&path, bytes).unwrap();
        assert!(read_blob_file::<H>(&path).is_err());
    }

    #[test]
    fn writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        let header = H {
            kind: "same".into(),
            n: 2,
        };
        write_blob_file(&p1, &header, &[1.5, 2.5]).unwrap();
        write_blob_file(&p2, &header, &[1.5, 2.5]).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
