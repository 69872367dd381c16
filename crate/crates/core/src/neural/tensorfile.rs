//! Binary tensor container.
//!
//! ```text
//! "HJNT"            4 bytes magic
//! version           u32 LE
//! count             u32 LE
//! count x { name_len u32, name utf-8, rank u32, dims u64 x rank }
//! payloads          f32 LE, row-major, in directory order
//! ```
//!
//! Column vectors are written with rank 1.

use std::io::{Read, Write};

use thiserror::Error;

use super::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"HJNT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupted tensor file: {0}")]
    Corrupted(String),
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, &Matrix<f32>)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, m) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        if m.cols() == 1 {
            w.write_all(&1u32.to_le_bytes())?;
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
        } else {
            w.write_all(&2u32.to_le_bytes())?;
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
            w.write_all(&(m.cols() as u64).to_le_bytes())?;
        }
    }
    for (_, m) in tensors {
        let mut buf = Vec::with_capacity(m.len() * 4);
        for v in m.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TensorFileError> {
        if self.buf.len() - self.pos < n {
            return Err(TensorFileError::Corrupted(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, TensorFileError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TensorFileError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Matrix<f32>)>, TensorFileError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(TensorFileError::Corrupted("bad magic".into()));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(TensorFileError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = cur.u32("tensor count")? as usize;
    let mut directory = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| TensorFileError::Corrupted("tensor name is not utf-8".into()))?
            .to_string();
        let (rows, cols) = match cur.u32("rank")? {
            1 => (cur.u64("dim")?, 1),
            2 => (cur.u64("dim")?, cur.u64("dim")?),
            other => {
                return Err(TensorFileError::Corrupted(format!(
                    "tensor {name} has unsupported rank {other}"
                )))
            }
        };
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= (buf.len() as u64) / 4)
            .ok_or_else(|| TensorFileError::Corrupted(format!("tensor {name} is too large")))?;
        directory.push((name, rows as usize, cols as usize, n as usize));
    }
    let mut out = Vec::with_capacity(directory.len());
    for (name, rows, cols, n) in directory {
        let bytes = cur.take(n * 4, &format!("payload of {name}"))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Matrix::from_vec(rows, cols, data)));
    }
    if cur.pos != buf.len() {
        return Err(TensorFileError::Corrupted(format!(
            "{} trailing bytes after payloads",
            buf.len() - cur.pos
        )));
    }
    Ok(out)
}
