//! Checkpoint container: magic, JSON header, then raw little-endian f64 arrays.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SURFBAK1";

pub fn write_archive<H: Serialize>(path: &Path, header: &H, arrays: &[&[f64]]) -> Result<()> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let total: usize = arrays.iter().map(|a| 8 + 8 * a.len()).sum();
    let mut buf = Vec::with_capacity(8 + 8 + json.len() + 8 + total);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for a in arrays {
        buf.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for v in a.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_archive<H: DeserializeOwned>(path: &Path, component: &str) -> Result<(H, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = || Error::format(component, format!("{} is truncated", path.display()));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(Error::format(component, format!("{} is not a checkpoint archive", path.display())));
    }
    let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap()) as usize;
    let hlen = u64_at(take(8)?);
    let header: H = serde_json::from_slice(take(hlen)?).map_err(|e| Error::format(component, e.to_string()))?;
    let count = u64_at(take(8)?);
    let mut arrays = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u64_at(take(8)?);
        let raw = take(len.checked_mul(8).ok_or_else(truncated)?)?;
        arrays.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    Ok((header, arrays))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_archive(&p, &serde_json::json!({"k": 1}), &[&[1.0, -2.5], &[]]).unwrap();
        let (h, a): (serde_json::Value, _) = read_archive(&p, "test").unwrap();
        assert_eq!(h["k"], 1);
        assert_eq!(a, vec![vec![1.0, -2.5], vec![]]);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        let r: Result<(serde_json::Value, _)> = read_archive(&p, "test");
        assert!(matches!(r, Err(Error::Format { .. })));
    }
}
