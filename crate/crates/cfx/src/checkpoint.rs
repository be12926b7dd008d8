//! Checkpoint container.
//!
//! Layout: magic bytes `CFXM`, format version (u32 LE), tensor count (u64 LE),
//! then per tensor: name length (u32 LE), UTF-8 name, rank (u32 LE), dims
//! (u64 LE each), raw little-endian float32 payload. All model modules
//! serialize through this container.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CFXM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a checkpoint container)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("missing tensor `{0}` in checkpoint")]
    MissingTensor(String),
}

/// Ordered collection of named tensors.
#[derive(Debug, Default, Clone)]
pub struct Checkpoint {
    entries: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.entries.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.entries
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scalar convenience for structural metadata stored as 1-element tensors.
    pub fn get_scalar(&self, name: &str) -> Result<f32, CheckpointError> {
        let t = self.get(name)?;
        if t.numel() != 1 {
            return Err(CheckpointError::Malformed(format!(
                "tensor `{name}` is not a scalar"
            )));
        }
        Ok(t.data()[0])
    }

    pub fn insert_scalar(&mut self, name: &str, v: f32) {
        self.insert(name, Tensor::scalar(v));
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let count = read_u64(&mut r)?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| CheckpointError::Malformed("tensor name not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = vec![0.0f32; numel];
            let mut buf = [0u8; 4];
            for v in &mut data {
                r.read_exact(&mut buf)?;
                *v = f32::from_le_bytes(buf);
            }
            let t = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            entries.insert(name, t);
        }
        Ok(Checkpoint { entries })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_exact_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut ck = Checkpoint::new();
        ck.insert(
            "layer.w",
            Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap(),
        );
        ck.insert("layer.b", Tensor::vector(vec![0.1, 0.2, 0.3]));
        ck.insert_scalar("meta.version", 1.0);
        ck.save(&path).unwrap();

        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        for name in ["layer.w", "layer.b", "meta.version"] {
            let a = ck.get(name).unwrap();
            let b = loaded.get(name).unwrap();
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn missing_tensor_is_named() {
        let ck = Checkpoint::new();
        let err = ck.get("enc.w").unwrap_err();
        assert!(err.to_string().contains("enc.w"));
    }
}
