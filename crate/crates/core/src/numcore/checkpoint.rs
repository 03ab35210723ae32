//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes  "TXMLCKPT"
//! version      u32
//! d, H, d_h    u64 x 3
//! vocab size   u64
//! block count  u32
//! per block:   u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64
//! extra count  u32
//! per extra:   u32 key length, key bytes, u32 value length, value bytes
//! ```
//! All integers and doubles are little-endian.

use std::io::{self, Read, Write};

use super::matrix::Matrix;
use super::params::ParamStore;
use super::NumError;

pub const MAGIC: &[u8; 8] = b"TXMLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub d: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub vocab_size: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
    /// Free-form string metadata (vocabulary, layer count, task, ...).
    pub extras: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extras
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [self.header.d, self.header.heads, self.header.head_dim, self.header.vocab_size] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, m) in self.params.iter() {
            write_str(&mut w, name)?;
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
            w.write_all(&(m.cols() as u64).to_le_bytes())?;
            for x in m.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.write_all(&(self.extras.len() as u32).to_le_bytes())?;
        for (k, v) in &self.extras {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NumError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(NumError::Format("bad checkpoint magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(NumError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header = CheckpointHeader {
            d: read_u64(&mut r)?,
            heads: read_u64(&mut r)?,
            head_dim: read_u64(&mut r)?,
            vocab_size: read_u64(&mut r)?,
        };
        let blocks = read_u32(&mut r)?;
        let mut params = ParamStore::new();
        for _ in 0..blocks {
            let name = read_str(&mut r)?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| *n <= 1 << 32)
                .ok_or_else(|| NumError::Format(format!("block `{name}` too large")))?;
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(io_err)?;
                data.push(f64::from_le_bytes(buf));
            }
            params.insert(name, Matrix::from_vec(rows, cols, data)?)?;
        }
        let n_extra = read_u32(&mut r)?;
        let mut extras = Vec::with_capacity(n_extra as usize);
        for _ in 0..n_extra {
            extras.push((read_str(&mut r)?, read_str(&mut r)?));
        }
        Ok(Self {
            header,
            params,
            extras,
        })
    }
}

fn io_err(e: io::Error) -> NumError {
    NumError::Format(format!("truncated or unreadable checkpoint: {e}"))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NumError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NumError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, NumError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 28 {
        return Err(NumError::Format("string field too long".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(io_err)?;
    String::from_utf8(buf).map_err(|_| NumError::Format("string field is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_little_endian_and_round_trips() {
        let mut params = ParamStore::new();
        params.insert("w", Matrix::row_vector(&[1.0, -0.5])).unwrap();
        let ck = Checkpoint {
            header: CheckpointHeader { d: 2, heads: 1, head_dim: 2, vocab_size: 7 },
            params,
            extras: vec![("task".into(), "text2mol".into())],
        };
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        // first block: name length 1, "w", rows 1, cols 2, then 1.0
        let off = 8 + 4 + 32 + 4;
        assert_eq!(&bytes[off..off + 4], &1u32.to_le_bytes());
        assert_eq!(bytes[off + 4], b'w');
        assert_eq!(&bytes[off + 21..off + 29], &1.0f64.to_le_bytes());
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn truncated_input_is_format_error() {
        assert!(matches!(
            Checkpoint::read_from(&b"TXMLCKPT\x01"[..]),
            Err(NumError::Format(_))
        ));
    }
}
