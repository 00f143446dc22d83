//! Binary container for distilled sets. Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `DAPSET\0\0` |
//! | 4     | format version (u32) |
//! | 8     | header length `h` (u64) |
//! | h     | UTF-8 JSON header |
//! | rest  | f64 samples, row-major, classes in header order |

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::{DistilledSet, Provenance};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"DAPSET\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dim: usize,
    ipc: usize,
    classes: Vec<usize>,
    provenance: Provenance,
}

pub fn encode(set: &DistilledSet) -> Result<Vec<u8>> {
    let header = Header { dim: set.dim(), ipc: set.ipc(), classes: set.classes(), provenance: set.provenance.clone() };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * set.len() * set.dim());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for rows in set.per_class().values() {
        for v in rows.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<DistilledSet> {
    let fail = |m: &str| Error::Format(format!("distilled-set container: {m}"));
    if bytes.len() < 20 || bytes[..8] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_start = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| fail("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..body_start]).map_err(|e| fail(&e.to_string()))?;
    let body = &bytes[body_start..];
    let expected = header.classes.len() * header.ipc * header.dim * 8;
    if body.len() != expected {
        return Err(fail(&format!("body is {} bytes, expected {expected}", body.len())));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut per_class = BTreeMap::new();
    for &c in &header.classes {
        let rows = (0..header.ipc).map(|_| values.by_ref().take(header.dim).collect()).collect();
        if per_class.insert(c, rows).is_some() {
            return Err(fail(&format!("duplicate class {c}")));
        }
    }
    if header.provenance.ipc != header.ipc {
        return Err(fail("ipc disagrees with provenance"));
    }
    DistilledSet::new(header.dim, per_class, header.provenance)
}

pub fn write(set: &DistilledSet, path: &Path) -> Result<()> {
    let bytes = encode(set)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<DistilledSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::distill_random;
    use crate::tasks::rings_and_blobs;

    #[test]
    fn round_trip_and_corruption() {
        let task = rings_and_blobs(0, 30, 5).unwrap();
        let mut set = distill_random(&task.train, 7, 3).unwrap();
        set.provenance.config_hash = Some("abc".into());
        let bytes = encode(&set).unwrap();
        assert_eq!(decode(&bytes).unwrap(), set);
        assert_eq!(encode(&set).unwrap(), bytes);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn sha_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
