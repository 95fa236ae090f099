//! On-disk archive of named tensors: model parameters, optimizer state,
//! and scalar metadata, all in one flat file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "NGCK"
//! version u32      1
//! count   u32      number of entries
//! entry*  name_len u32, name (UTF-8), rank u32, extents (u32 each),
//!         dtype    u8 (1 = f32, 2 = f64), raw values (LE)
//! ```
//!
//! Round trips are bit-exact: values are written with their native bit
//! patterns, never converted between widths.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::numerics::{Dtype, Scalar, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"NGCK";
const VERSION: u32 = 1;

/// One stored tensor, in whichever precision it was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ArchiveTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl ArchiveTensor {
    fn dtype(&self) -> Dtype {
        match self {
            ArchiveTensor::F32(_) => Dtype::F32,
            ArchiveTensor::F64(_) => Dtype::F64,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            ArchiveTensor::F32(t) => t.shape(),
            ArchiveTensor::F64(t) => t.shape(),
        }
    }
}

impl From<Tensor<f32>> for ArchiveTensor {
    fn from(t: Tensor<f32>) -> Self {
        ArchiveTensor::F32(t)
    }
}

impl From<Tensor<f64>> for ArchiveTensor {
    fn from(t: Tensor<f64>) -> Self {
        ArchiveTensor::F64(t)
    }
}

/// Scalar types that know how to move between tensors and archives in
/// their native width.
pub trait ArchiveScalar: Scalar {
    fn wrap(t: Tensor<Self>) -> ArchiveTensor;
    fn unwrap(entry: &ArchiveTensor) -> Option<&Tensor<Self>>;
}

impl ArchiveScalar for f32 {
    fn wrap(t: Tensor<f32>) -> ArchiveTensor {
        ArchiveTensor::F32(t)
    }

    fn unwrap(entry: &ArchiveTensor) -> Option<&Tensor<f32>> {
        match entry {
            ArchiveTensor::F32(t) => Some(t),
            ArchiveTensor::F64(_) => None,
        }
    }
}

impl ArchiveScalar for f64 {
    fn wrap(t: Tensor<f64>) -> ArchiveTensor {
        ArchiveTensor::F64(t)
    }

    fn unwrap(entry: &ArchiveTensor) -> Option<&Tensor<f64>> {
        match entry {
            ArchiveTensor::F64(t) => Some(t),
            ArchiveTensor::F32(_) => None,
        }
    }
}

/// An ordered collection of named tensors with a binary file format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointArchive {
    order: Vec<String>,
    entries: HashMap<String, ArchiveTensor>,
}

impl CheckpointArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace an entry. Insertion order is preserved on disk.
    pub fn insert(&mut self, name: impl Into<String>, tensor: impl Into<ArchiveTensor>) {
        let name = name.into();
        if !self.entries.contains_key(&name) {
            self.order.push(name.clone());
        }
        self.entries.insert(name, tensor.into());
    }

    /// Store a scalar as a rank-1, length-1 f64 tensor.
    pub fn insert_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.insert(
            name,
            Tensor::new(vec![1], vec![value]).expect("1-element tensor"),
        );
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t: &Tensor<f64> = self.get(name)?;
        if t.len() != 1 {
            return Err(Error::Checkpoint(format!(
                "entry {name:?} holds {} values, expected a scalar",
                t.len()
            )));
        }
        Ok(t.data()[0])
    }

    pub fn get<T: ArchiveScalar>(&self, name: &str) -> Result<&Tensor<T>> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name:?}")))?;
        T::unwrap(entry).ok_or_else(|| {
            Error::Checkpoint(format!(
                "entry {name:?} holds {:?} data, not the requested precision",
                entry.dtype()
            ))
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.order.len() as u32).to_le_bytes());
        for name in &self.order {
            let entry = &self.entries[name];
            bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
            bytes.extend_from_slice(name.as_bytes());
            let shape = entry.shape();
            bytes.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &extent in shape {
                bytes.extend_from_slice(&(extent as u32).to_le_bytes());
            }
            bytes.push(entry.dtype().tag());
            match entry {
                ArchiveTensor::F32(t) => {
                    for v in t.data() {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
                ArchiveTensor::F64(t) => {
                    for v in t.data() {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader { bytes: &bytes, at: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: not a checkpoint archive (bad magic)",
                path.display()
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format version {version}",
                path.display()
            )));
        }
        let count = r.u32()? as usize;
        let mut archive = CheckpointArchive::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let len: usize = shape.iter().product();
            let tag = r.take(1)?[0];
            let dtype = Dtype::from_tag(tag).ok_or_else(|| {
                Error::Checkpoint(format!("entry {name:?}: unknown dtype tag {tag}"))
            })?;
            let entry = match dtype {
                Dtype::F32 => {
                    let raw = r.take(len * 4)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                        .collect();
                    ArchiveTensor::F32(Tensor::new(shape, data)?)
                }
                Dtype::F64 => {
                    let raw = r.take(len * 8)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                        .collect();
                    ArchiveTensor::F64(Tensor::new(shape, data)?)
                }
            };
            if archive.contains(&name) {
                return Err(Error::Checkpoint(format!("duplicate entry {name:?}")));
            }
            archive.insert(name, ArchiveEntryHack(entry));
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} trailing bytes after the last entry",
                path.display(),
                bytes.len() - r.at
            )));
        }
        Ok(archive)
    }
}

/// Lets `insert` accept an already-built [`ArchiveTensor`].
struct ArchiveEntryHack(ArchiveTensor);

impl From<ArchiveEntryHack> for ArchiveTensor {
    fn from(h: ArchiveEntryHack) -> Self {
        h.0
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated archive: wanted {n} bytes at offset {}, file has {}",
                self.at,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_archive() -> CheckpointArchive {
        let mut ar = CheckpointArchive::new();
        ar.insert(
            "w",
            Tensor::new(vec![2, 3], vec![1.5f32, -2.25, 0.0, f32::MIN_POSITIVE, 3.5, -0.125])
                .unwrap(),
        );
        ar.insert(
            "stats.m",
            Tensor::new(vec![4], vec![0.1f64, -0.2, 1e-300, 7.0]).unwrap(),
        );
        ar.insert_scalar("meta.step", 42.0);
        ar
    }

    #[test]
    fn round_trip_is_bit_exact_and_order_preserving() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ar = sample_archive();
        ar.save(&path).unwrap();
        let back = CheckpointArchive::load(&path).unwrap();

        assert_eq!(
            back.names().collect::<Vec<_>>(),
            vec!["w", "stats.m", "meta.step"]
        );
        let w: &Tensor<f32> = back.get("w").unwrap();
        let w0: &Tensor<f32> = ar.get("w").unwrap();
        assert_eq!(w.shape(), w0.shape());
        for (a, b) in w.data().iter().zip(w0.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let m: &Tensor<f64> = back.get("stats.m").unwrap();
        let m0: &Tensor<f64> = ar.get("stats.m").unwrap();
        for (a, b) in m.data().iter().zip(m0.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.scalar("meta.step").unwrap(), 42.0);
    }

    #[test]
    fn save_load_save_produces_identical_bytes() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ar = sample_archive();
        ar.save(&p1).unwrap();
        CheckpointArchive::load(&p1).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn wrong_precision_lookup_is_an_error() {
        let ar = sample_archive();
        assert!(ar.get::<f64>("w").is_err());
        assert!(ar.get::<f32>("stats.m").is_err());
        assert!(ar.get::<f32>("nope").is_err());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ar = sample_archive();
        ar.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            CheckpointArchive::load(&path),
            Err(Error::Checkpoint(m)) if m.contains("magic")
        ));

        // Unsupported version.
        let mut bad = bytes.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            CheckpointArchive::load(&path),
            Err(Error::Checkpoint(m)) if m.contains("version")
        ));

        // Truncation.
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            CheckpointArchive::load(&path),
            Err(Error::Checkpoint(m)) if m.contains("truncated")
        ));

        // Trailing garbage.
        let mut bad = bytes.clone();
        bad.extend_from_slice(&[0, 1, 2]);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            CheckpointArchive::load(&path),
            Err(Error::Checkpoint(m)) if m.contains("trailing")
        ));

        // Missing file mentions the path.
        let missing = dir.path().join("absent.ckpt");
        let err = CheckpointArchive::load(&missing).unwrap_err();
        assert!(err.to_string().contains("absent.ckpt"));
    }
}
