//! Named-tensor archive shared by checkpoints and cached features.
//!
//! Layout (little-endian): magic `WLANN1`; `u32` length + config JSON;
//! `u32` length + metadata JSON; `u32` entry count; per entry `u16` name
//! length, UTF-8 name, `u8` rank, `u32` per dimension, then `f32` payload.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::ndiff::TensorD;

pub const MAGIC: &[u8; 6] = b"WLANN1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive {
    pub config: String,
    pub metadata: String,
    pub entries: Vec<(String, TensorD)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::TruncatedPayload)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::TruncatedPayload)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn text(&mut self, n: usize, what: &str) -> std::result::Result<String, CheckpointError> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CheckpointError::MalformedHeader(format!("{what} is not UTF-8")))
    }
}

impl TensorArchive {
    pub fn new(config: String, metadata: String) -> Self {
        Self {
            config,
            metadata,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: TensorD) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&TensorD> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for s in [&self.config, &self.metadata] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut seen = HashSet::new();
        for (name, t) in &self.entries {
            if !seen.insert(name.as_str()) {
                return Err(CheckpointError::DuplicateTensor(name.clone()).into());
            }
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Validation(format!("tensor name of {} bytes is too long", name.len())))?;
            let rank = u8::try_from(t.ndim())
                .map_err(|_| Error::Validation(format!("tensor '{name}' has too many dimensions")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                let d =
                    u32::try_from(d).map_err(|_| Error::Validation(format!("dimension {d} of '{name}' too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in t.values() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let head = &bytes[..bytes.len().min(MAGIC.len())];
        if head != &MAGIC[..head.len()] {
            return Err(CheckpointError::BadMagic.into());
        }
        let mut r = Reader { bytes, pos: 0 };
        r.take(MAGIC.len())?;
        let n = r.u32()? as usize;
        let config = r.text(n, "config")?;
        let n = r.u32()? as usize;
        let metadata = r.text(n, "metadata")?;
        let count = r.u32()? as usize;
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = r.text(name_len, "tensor name")?;
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::DuplicateTensor(name).into());
            }
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| CheckpointError::MalformedHeader(format!("shape {shape:?} of '{name}' overflows")))?;
            let values = r
                .take(len)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            entries.push((name, TensorD::new(shape, values)?));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::MalformedHeader(format!("{} trailing bytes", bytes.len() - r.pos)).into());
        }
        Ok(Self {
            config,
            metadata,
            entries,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorArchive {
        let mut a = TensorArchive::new("{\"a\":1}".into(), "{}".into());
        a.push("x", TensorD::from_fn(&[2, 3], |i| i as f64 * 0.5));
        a.push("s", TensorD::scalar(-1.25));
        a
    }

    #[test]
    fn round_trip() {
        let a = sample();
        assert_eq!(TensorArchive::from_bytes(&a.to_bytes().unwrap()).unwrap(), a);
    }

    #[test]
    fn distinct_failures() {
        let bytes = sample().to_bytes().unwrap();
        let err = |b: &[u8]| match TensorArchive::from_bytes(b) {
            Err(Error::Checkpoint(c)) => c.code(),
            other => panic!("{other:?}"),
        };
        assert_eq!(err(b"NOTWLANN"), 10);
        assert_eq!(err(&bytes[..bytes.len() - 3]), 11);
        assert_eq!(err(&bytes[..4]), 11);
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(err(&extra), 15);
        let mut dup = sample();
        dup.push("x", TensorD::scalar(0.0));
        assert!(matches!(
            dup.to_bytes(),
            Err(Error::Checkpoint(CheckpointError::DuplicateTensor(_)))
        ));
    }
}
