//! Binary snapshot files.
//!
//! Layout, all multi-byte fields little-endian:
//!
//! | field        | type            |
//! |--------------|-----------------|
//! | magic        | `b"PROMSNAP"`   |
//! | version      | `u32` = 1       |
//! | endianness   | `u8` = 0        |
//! | state length | `u64`           |
//! | count        | `u64`           |
//! | times        | `count × f64`   |
//! | states       | column-major `f64` |

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use pmor::rom::SnapshotSet;

use crate::error::{HarnessError, HarnessResult};

const MAGIC: &[u8; 8] = b"PROMSNAP";
const VERSION: u32 = 1;
const LITTLE_ENDIAN: u8 = 0;
const HEADER_LEN: usize = 8 + 4 + 1 + 8 + 8;

pub fn encode_snapshots(set: &SnapshotSet) -> Vec<u8> {
    let (n, m) = set.states.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m * (n + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(LITTLE_ENDIAN);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(m as u64).to_le_bytes());
    for t in &set.times {
        out.extend_from_slice(&t.to_le_bytes());
    }
    // nalgebra storage is already column-major.
    for v in set.states.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_error(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> HarnessResult<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_error(format!("file truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> HarnessResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, count: usize, what: &str) -> HarnessResult<Vec<f64>> {
        let len = count.checked_mul(8).ok_or_else(|| format_error(format!("{what} size overflows")))?;
        let raw = self.take(len, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode_snapshots(bytes: &[u8]) -> HarnessResult<SnapshotSet> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(format_error("bad magic bytes, not a snapshot file"));
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format_error(format!("unsupported snapshot format version {version}")));
    }
    let endian = cur.take(1, "endianness flag")?[0];
    if endian != LITTLE_ENDIAN {
        return Err(format_error(format!("unsupported endianness flag {endian}")));
    }
    let n = usize::try_from(cur.u64("state length")?).map_err(|_| format_error("state length too large"))?;
    let m = usize::try_from(cur.u64("snapshot count")?).map_err(|_| format_error("snapshot count too large"))?;
    let times = cur.f64s(m, "timestamps")?;
    let total = n.checked_mul(m).ok_or_else(|| format_error("state block size overflows"))?;
    let data = cur.f64s(total, "state columns")?;
    if cur.pos != bytes.len() {
        return Err(format_error(format!("{} trailing bytes after snapshot data", bytes.len() - cur.pos)));
    }
    Ok(SnapshotSet::new(times, DMatrix::from_vec(n, m, data))?)
}

pub fn write_snapshots(path: &Path, set: &SnapshotSet) -> HarnessResult<()> {
    let mut f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(&encode_snapshots(set)).map_err(|e| HarnessError::io(path, e))
}

pub fn read_snapshots(path: &Path) -> HarnessResult<SnapshotSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| HarnessError::io(path, e))?;
    decode_snapshots(&bytes)
}
