//! Flat binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "RRCKPT01"
//! count      u32
//! header     count × { name_len u32, name utf-8, ndim u32, dims ndim × u64 }
//! payload    count × row-major f64 values, in header order
//! ```

use std::fs;
use std::path::Path;

use crate::diffcore::params::ParamStore;
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"RRCKPT01";

pub fn encode<T: Scalar>(params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.total_len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()? as usize;
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?
            .to_owned();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        header.push((name, shape));
    }
    let mut params = ParamStore::new();
    for (name, shape) in header {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| r.u64().map(|b| T::lit(f64::from_bits(b))))
            .collect::<Result<Vec<_>>>()?;
        if params.contains(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(params)
}

pub fn save<T: Scalar>(params: &ParamStore<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_lossless(
            a in prop::collection::vec(-1e6f64..1e6, 1..12),
            b in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            let mut params = ParamStore::new();
            params.insert("lstm.w_z", Tensor::vector(a));
            params.insert("fc.w", Tensor::matrix(2, 3, b).unwrap());
            let back: ParamStore<f64> = decode(&encode(&params)).unwrap();
            prop_assert_eq!(back, params);
        }
    }

    #[test]
    fn header_layout() {
        let mut params = ParamStore::new();
        params.insert("b", Tensor::vector(vec![1.5f64]));
        let bytes = encode(&params);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(&bytes[bytes.len() - 8..], &1.5f64.to_le_bytes());
    }

    #[test]
    fn truncated_input_is_rejected() {
        let mut params = ParamStore::new();
        params.insert("b", Tensor::vector(vec![1.0f64, 2.0]));
        let bytes = encode(&params);
        assert!(decode::<f64>(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode::<f64>(b"NOTMAGIC").is_err());
    }
}
