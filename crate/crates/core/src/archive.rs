//! Binary container of named f64 arrays, the payload format of checkpoints
//! and loadable extractor weights.
//!
//! Layout (little endian): entry count `u32`, then per entry the name
//! (`u32` length + UTF-8), rank `u32`, dims `u64 × rank`, values `f64 × len`.

use crate::error::{Error, Result};
use crate::nn::Parameters;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub entries: Vec<TensorEntry>,
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 name".into()))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub(crate) fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

impl TensorArchive {
    /// Snapshot of every array of `p`, names prefixed by `prefix`.
    pub fn push_params<P: Parameters>(&mut self, prefix: &str, p: &P) {
        p.visit(prefix, &mut |name, shape, data| {
            self.entries.push(TensorEntry {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
    }

    pub fn push(&mut self, name: &str, data: Vec<f64>) {
        self.entries.push(TensorEntry {
            name: name.to_string(),
            shape: vec![data.len()],
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Copies archived arrays into `p`; every array of `p` must be present
    /// with a matching shape.
    pub fn load_params<P: Parameters>(&self, prefix: &str, p: &mut P) -> Result<()> {
        let mut err = None;
        p.visit_mut(prefix, &mut |name, shape, data| {
            if err.is_some() {
                return;
            }
            match self.get(name) {
                None => err = Some(Error::Checkpoint(format!("missing tensor {name}"))),
                Some(e) if e.shape != shape => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        e.shape, shape
                    )))
                }
                Some(e) => data.copy_from_slice(&e.data),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        put_u32(out, self.entries.len() as u32);
        for e in &self.entries {
            put_str(out, &e.name);
            put_u32(out, e.shape.len() as u32);
            for &d in &e.shape {
                put_u64(out, d as u64);
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.ok_or_else(|| Error::Checkpoint(format!("tensor {name} too large")))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            entries.push(TensorEntry { name, shape, data });
        }
        Ok(TensorArchive { entries })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let a = Self::decode(&mut r)?;
        if !r.finished() {
            return Err(Error::Checkpoint("trailing bytes after tensor archive".into()));
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ConvKernel, ParametersExt};
    use crate::seed::Seed;

    #[test]
    fn round_trip_is_byte_stable() {
        let k = ConvKernel::init(3, 2, 3, 1.0, &mut Seed(1).rng());
        let mut a = TensorArchive::default();
        a.push_params("k", &k);
        a.push("extra", vec![1.5, -2.0]);
        let bytes = a.to_bytes();
        let b = TensorArchive::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(bytes, b.to_bytes());
        let mut k2 = k.zeros_like();
        b.load_params("k", &mut k2).unwrap();
        assert_eq!(k, k2);
    }

    #[test]
    fn rejects_truncation_and_shape_mismatch() {
        let k = ConvKernel::init(3, 2, 3, 1.0, &mut Seed(1).rng());
        let mut a = TensorArchive::default();
        a.push_params("k", &k);
        let bytes = a.to_bytes();
        assert!(TensorArchive::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = ConvKernel::zeros(2, 2, 3);
        assert!(a.load_params("k", &mut wrong).is_err());
        assert!(a.load_params("other", &mut ConvKernel::zeros(3, 2, 3)).is_err());
    }
}
