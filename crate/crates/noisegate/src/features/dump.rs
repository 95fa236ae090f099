//! On-disk feature dump.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic   4 bytes  "FSEQ"
//! frames  u32      T
//! chans   u32      F
//! hop     f32      seconds
//! window  f32      seconds
//! data    T*F f32  row-major frames
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::mel::FeatureSequence;
use crate::numerics::Tensor;
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"FSEQ";

pub fn write_feature_dump(path: impl AsRef<Path>, fs: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + fs.frames.len() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&(fs.n_frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(fs.n_channels() as u32).to_le_bytes());
    buf.extend_from_slice(&(fs.hop as f32).to_le_bytes());
    buf.extend_from_slice(&(fs.window as f32).to_le_bytes());
    for &v in fs.frames.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_feature_dump(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || bytes[..4] != MAGIC {
        return Err(Error::Dataset(format!(
            "{}: not a feature dump (bad magic or truncated header)",
            path.display()
        )));
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let chans = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hop = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
    let window = f32::from_le_bytes(bytes[16..20].try_into().unwrap()) as f64;
    let expected = 20 + frames * chans * 4;
    if bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "{}: payload is {} bytes, header implies {}",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    let mut data = Vec::with_capacity(frames * chans);
    for i in 0..frames * chans {
        let off = 20 + i * 4;
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
    }
    Ok(FeatureSequence {
        frames: Tensor::new(vec![frames, chans], data)?,
        hop,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_f32_payload_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fseq");
        let frames = Tensor::from_fn(5, 4, |r, c| ((r * 4 + c) as f64 * 0.37 - 3.0) as f32 as f64);
        let fs = FeatureSequence {
            frames,
            hop: 0.010f32 as f64,
            window: 0.032f32 as f64,
        };
        write_feature_dump(&path, &fs).unwrap();
        let back = read_feature_dump(&path).unwrap();
        assert_eq!(back, fs);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.fseq");
        std::fs::write(&bad, b"NOPE0000000000000000").unwrap();
        assert!(read_feature_dump(&bad).is_err());

        let trunc = dir.path().join("trunc.fseq");
        let frames = Tensor::from_fn(3, 2, |_, _| 0.5);
        let fs = FeatureSequence {
            frames,
            hop: 0.01,
            window: 0.032,
        };
        write_feature_dump(&trunc, &fs).unwrap();
        let bytes = std::fs::read(&trunc).unwrap();
        std::fs::write(&trunc, &bytes[..bytes.len() - 3]).unwrap();
        let err = read_feature_dump(&trunc).unwrap_err();
        assert!(err.to_string().contains("header implies"), "got: {err}");
    }
}
