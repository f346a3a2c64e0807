//! Named-tensor container used for model states and continuous-run checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MPINCKPT"
//! version    u32      1
//! n_tensors  u32
//!   name_len u16, name (UTF-8), rows u64, cols u64, rows*cols f64 (LE, row-major)
//! n_meta     u32
//!   name_len u16, name (UTF-8), value u64
//! ```
//!
//! Floats are stored by bit pattern, so a round trip is exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MPINCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    tensors: BTreeMap<String, Array2<f64>>,
    meta: BTreeMap<String, u64>,
}

impl Container {
    pub fn put_tensor(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.tensors.insert(name.into(), value.as_standard_layout().into_owned());
    }

    pub fn put_meta(&mut self, name: impl Into<String>, value: u64) {
        self.meta.insert(name.into(), value);
    }

    pub fn tensor(&self, name: &str) -> Result<&Array2<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn meta(&self, name: &str) -> Result<u64> {
        self.meta
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing field {name:?}")))
    }

    pub fn has_tensor(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_name(&mut out, name)?;
            out.write_all(&(t.nrows() as u64).to_le_bytes())?;
            out.write_all(&(t.ncols() as u64).to_le_bytes())?;
            for v in t.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (name, v) in &self.meta {
            write_name(&mut out, name)?;
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut c = Container::default();
        for _ in 0..read_u32(&mut input)? {
            let name = read_name(&mut input)?;
            let rows = read_u64(&mut input)? as usize;
            let cols = read_u64(&mut input)? as usize;
            let len = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} too large")))?;
            let mut data = Vec::with_capacity(len.min(1 << 24));
            let mut buf = [0u8; 8];
            for _ in 0..len {
                input.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let t = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            c.tensors.insert(name, t);
        }
        for _ in 0..read_u32(&mut input)? {
            let name = read_name(&mut input)?;
            let v = read_u64(&mut input)?;
            c.meta.insert(name, v);
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn write_name<W: Write>(out: &mut W, name: &str) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Checkpoint(format!("name too long: {name:?}")))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    Ok(())
}

fn read_name<R: Read>(input: &mut R) -> Result<String> {
    let mut len = [0u8; 2];
    input.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            rows in 0usize..5,
            cols in 0usize..5,
            seed in any::<u64>(),
            bits in proptest::collection::vec(any::<u64>(), 25),
        ) {
            let data: Vec<f64> = bits[..rows * cols].iter().map(|b| f64::from_bits(*b)).collect();
            let mut c = Container::default();
            c.put_tensor("t", Array2::from_shape_vec((rows, cols), data.clone()).unwrap());
            c.put_meta("seed", seed);
            let mut buf = Vec::new();
            c.write_to(&mut buf).unwrap();
            let back = Container::read_from(buf.as_slice()).unwrap();
            let got: Vec<u64> = back.tensor("t").unwrap().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
            prop_assert_eq!(back.meta("seed").unwrap(), seed);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Container::read_from(&b"NOTACKPTxxxx"[..]).is_err());
    }
}
