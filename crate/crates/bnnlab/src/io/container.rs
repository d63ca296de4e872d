//! A small binary container for named f64 arrays plus a JSON metadata block.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic   b"BLAB"
//! version u16      (currently 1)
//! kind    u16      (1 weights, 2 posterior, 3 encoder)
//! meta    u32 len + JSON bytes
//! count   u32
//! arrays  repeated: u16 name len + name, u8 ndim, u64 dims..., f64 data...
//! ```
//!
//! Round trips are bit-exact: f64 payloads are written verbatim.

use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BLAB";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Weights,
    Posterior,
    Encoder,
}

impl ContainerKind {
    fn code(self) -> u16 {
        match self {
            ContainerKind::Weights => 1,
            ContainerKind::Posterior => 2,
            ContainerKind::Encoder => 3,
        }
    }

    fn from_code(c: u16) -> Result<Self> {
        match c {
            1 => Ok(ContainerKind::Weights),
            2 => Ok(ContainerKind::Posterior),
            3 => Ok(ContainerKind::Encoder),
            _ => Err(Error::Format(format!("unknown container kind {c}"))),
        }
    }
}

/// In-memory view of a container: kind, JSON metadata and named arrays.
/// Arrays are kept in a BTreeMap so serialization order is deterministic.
#[derive(Debug, Clone)]
pub struct ArrayContainer {
    pub kind: ContainerKind,
    pub meta: serde_json::Value,
    pub arrays: BTreeMap<String, ArrayD<f64>>,
}

impl ArrayContainer {
    pub fn new(kind: ContainerKind, meta: serde_json::Value) -> Self {
        Self { kind, meta, arrays: BTreeMap::new() }
    }

    pub fn insert<D: ndarray::Dimension>(&mut self, name: &str, a: ndarray::Array<f64, D>) {
        self.arrays.insert(name.to_string(), a.into_dyn());
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Format(format!("container is missing array '{name}'")))
    }

    pub fn get1(&self, name: &str) -> Result<ndarray::Array1<f64>> {
        Ok(self.get(name)?.clone().into_dimensionality().map_err(|_| {
            Error::Format(format!("array '{name}' is not one-dimensional"))
        })?)
    }

    pub fn get2(&self, name: &str) -> Result<ndarray::Array2<f64>> {
        Ok(self.get(name)?.clone().into_dimensionality().map_err(|_| {
            Error::Format(format!("array '{name}' is not two-dimensional"))
        })?)
    }

    pub fn get4(&self, name: &str) -> Result<ndarray::Array4<f64>> {
        Ok(self.get(name)?.clone().into_dimensionality().map_err(|_| {
            Error::Format(format!("array '{name}' is not four-dimensional"))
        })?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        w.write_u16::<LittleEndian>(self.kind.code())?;
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_u32::<LittleEndian>(meta.len() as u32)?;
        w.write_all(&meta)?;
        w.write_u32::<LittleEndian>(self.arrays.len() as u32)?;
        for (name, a) in &self.arrays {
            let nb = name.as_bytes();
            w.write_u16::<LittleEndian>(nb.len() as u16)?;
            w.write_all(nb)?;
            w.write_u8(a.ndim() as u8)?;
            for d in a.shape() {
                w.write_u64::<LittleEndian>(*d as u64)?;
            }
            let contiguous = a.as_standard_layout();
            for v in contiguous.iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("{}: not a BLAB container", path.display())));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let kind = ContainerKind::from_code(r.read_u16::<LittleEndian>()?)?;
        let meta_len = r.read_u32::<LittleEndian>()? as usize;
        let mut meta_buf = vec![0u8; meta_len];
        r.read_exact(&mut meta_buf)?;
        let meta: serde_json::Value = serde_json::from_slice(&meta_buf)?;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.read_u16::<LittleEndian>()? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Format("array name is not utf-8".into()))?;
            let ndim = r.read_u8()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.read_u64::<LittleEndian>()? as usize);
            }
            let len: usize = dims.iter().product();
            let mut data = vec![0.0f64; len];
            for v in data.iter_mut() {
                *v = r.read_f64::<LittleEndian>()?;
            }
            let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| Error::Format(format!("bad array shape: {e}")))?;
            arrays.insert(name, arr);
        }
        Ok(Self { kind, meta, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn container_roundtrip_is_bit_exact() {
        let mut c = ArrayContainer::new(
            ContainerKind::Weights,
            serde_json::json!({"config_digest": "abc", "provenance": {"method": "map"}}),
        );
        // values chosen to exercise exact binary representation
        c.insert("w", arr2(&[[0.1, -1.5e-300], [f64::MIN_POSITIVE, 3.0]]));
        c.insert("b", arr1(&[1.0 / 3.0, 2.0f64.sqrt()]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.blab");
        c.save(&p).unwrap();
        let back = ArrayContainer::load(&p).unwrap();
        assert_eq!(back.kind, ContainerKind::Weights);
        assert_eq!(back.meta["config_digest"], "abc");
        for (name, a) in &c.arrays {
            let b = back.get(name).unwrap();
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "bit-exact round trip");
            }
        }
        // double save produces identical bytes
        let p2 = dir.path().join("y.blab");
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.blab");
        std::fs::write(&p, b"NOPE....").unwrap();
        assert!(ArrayContainer::load(&p).is_err());
    }
}
