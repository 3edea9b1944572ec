use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"MLSP";
pub const STORE_VERSION: u32 = 1;
const KIND: &str = "MLSP feature store";

/// Fixed-dimension `f32` vectors keyed by image id, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    records: IndexMap<String, Vec<f32>>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        Ok(Self {
            dim,
            records: IndexMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let id = image_id.into();
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "feature vector for {id:?} has {} values, store dim is {}",
                values.len(),
                self.dim
            )));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("image id of {} bytes is too long", id.len())));
        }
        if self.records.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate image id {id:?}")));
        }
        self.records.insert(id, values);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&[f32]> {
        self.records.get(image_id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.records.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Rows for `ids` in the given order; a missing id is an error naming it.
    pub fn matrix<T: Scalar>(&self, ids: &[&str]) -> Result<Array2<T>> {
        let mut out = Array2::zeros((ids.len(), self.dim));
        for (r, id) in ids.iter().enumerate() {
            let v = self
                .get(id)
                .ok_or_else(|| Error::invalid(format!("image id {id:?} has no feature vector")))?;
            for (c, &x) in v.iter().enumerate() {
                out[[r, c]] = T::from_f32(x).unwrap();
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.len() * (self.dim * 4 + 18));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, v) in &self.records {
            buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, message: String| Error::Format {
            kind: KIND,
            offset: offset as u64,
            message,
        };
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<(usize, &[u8])> {
            if bytes.len() - pos < n {
                return Err(fail(pos, format!("truncated while reading {what} ({n} bytes needed, {} left)", bytes.len() - pos)));
            }
            let at = pos;
            pos += n;
            Ok((at, &bytes[at..at + n]))
        };
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let (_, magic) = take(4, "magic")?;
        if magic != MAGIC {
            return Err(fail(0, format!("bad magic {magic:?}, expected \"MLSP\"")));
        }
        let (at, v) = take(4, "version")?;
        let version = u32_at(v);
        if version != STORE_VERSION {
            return Err(fail(at, format!("unsupported version {version}")));
        }
        let count = u32_at(take(4, "record count")?.1) as usize;
        let (at, d) = take(4, "dim")?;
        let dim = u32_at(d) as usize;
        if dim == 0 {
            return Err(fail(at, "dim is 0".into()));
        }
        let mut store = Self::new(dim)?;
        for r in 0..count {
            let (_, len) = take(2, "id length")?;
            let len = u16::from_le_bytes(len.try_into().unwrap()) as usize;
            let (at, raw) = take(len, "id")?;
            let id = std::str::from_utf8(raw).map_err(|e| fail(at, format!("record {r}: id is not UTF-8: {e}")))?;
            let (_, vals) = take(dim * 4, "feature values")?;
            let values = vals.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            store.insert(id, values).map_err(|e| fail(at, format!("record {r}: {e}")))?;
        }
        if pos != bytes.len() {
            return Err(fail(pos, format!("{} trailing bytes after {count} records", bytes.len() - pos)));
        }
        Ok(store)
    }
}

pub fn write_store(store: &FeatureStore, path: &Path) -> Result<()> {
    std::fs::write(path, store.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_store(path: &Path) -> Result<FeatureStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureStore::from_bytes(&bytes).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_store(n: usize, dim: usize) -> FeatureStore {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = FeatureStore::new(dim).unwrap();
        for i in 0..n {
            s.insert(format!("img_{i:03}"), (0..dim).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect())
                .unwrap();
        }
        s
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.mlsp");
        let s = random_store(100, 16);
        write_store(&s, &path).unwrap();
        let back = read_store(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn empty_store_is_valid() {
        let s = FeatureStore::new(16).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 16);
        let back = FeatureStore::from_bytes(&bytes).unwrap();
        assert_eq!((back.len(), back.dim()), (0, 16));
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = random_store(3, 4).to_bytes();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        let err = FeatureStore::from_bytes(&bad).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
        assert!(err.to_string().contains("magic"));
        let err = FeatureStore::from_bytes(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let mut zero = bytes.clone();
        zero[12..16].copy_from_slice(&0u32.to_le_bytes());
        let err = FeatureStore::from_bytes(&zero).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 12, .. }), "{err}");
        assert!(FeatureStore::new(0).is_err());
    }

    #[test]
    fn insert_and_matrix() {
        let mut s = FeatureStore::new(2).unwrap();
        s.insert("a", vec![1.0, 2.0]).unwrap();
        s.insert("b", vec![3.0, 4.0]).unwrap();
        assert!(s.insert("a", vec![0.0, 0.0]).is_err());
        assert!(s.insert("c", vec![0.0]).is_err());
        let m: Array2<f64> = s.matrix(&["b", "a"]).unwrap();
        assert_eq!(m, ndarray::array![[3.0, 4.0], [1.0, 2.0]]);
        assert!(s.matrix::<f64>(&["zzz"]).unwrap_err().to_string().contains("zzz"));
    }
}
