//! Raw grayscale frame-stream container for one speaker's video.
//!
//! Layout: magic `AVFR`, then frame count, height, width as u32 LE, then
//! `F*H*W` bytes of row-major 8-bit frames. Pixel byte `b` represents the
//! value `b / 255`, so files round-trip losslessly.

use crate::error::{Error, Result};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;
use std::path::Path;

/// One speaker's frames, kept in their 8-bit storage form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameStream {
    pub height: usize,
    pub width: usize,
    /// `count * height * width` bytes, frame-major.
    pub data: Vec<u8>,
}

impl FrameStream {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.is_empty() || data.len() % (height * width) != 0 {
            return Err(Error::InvalidArgument(format!(
                "frame stream: {} bytes does not tile {height}x{width} frames",
                data.len()
            )));
        }
        Ok(FrameStream {
            height,
            width,
            data,
        })
    }

    pub fn count(&self) -> usize {
        self.data.len() / (self.height * self.width)
    }

    pub fn frame_bytes(&self, f: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[f * n..(f + 1) * n]
    }

    /// Frame `f` as a `[1, H, W]` tensor of values in `[0, 1]`.
    pub fn frame_tensor<T: Scalar>(&self, f: usize) -> Tensor<T> {
        let data = self
            .frame_bytes(f)
            .iter()
            .map(|&b| T::from_f64(b as f64 / 255.0))
            .collect();
        Tensor::from_vec(vec![1, self.height, self.width], data).unwrap()
    }
}

pub fn write_avfr(path: &Path, stream: &FrameStream) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + stream.data.len());
    buf.extend_from_slice(b"AVFR");
    buf.extend_from_slice(&(stream.count() as u32).to_le_bytes());
    buf.extend_from_slice(&(stream.height as u32).to_le_bytes());
    buf.extend_from_slice(&(stream.width as u32).to_le_bytes());
    buf.extend_from_slice(&stream.data);
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn read_avfr(path: &Path) -> Result<FrameStream> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_avfr(&bytes)
}

pub fn parse_avfr(bytes: &[u8]) -> Result<FrameStream> {
    let fail = |offset: usize, detail: String| Error::Parse {
        what: "avfr",
        offset: offset as u64,
        detail,
    };
    if bytes.len() < 16 {
        return Err(fail(0, format!("header needs 16 bytes, file has {}", bytes.len())));
    }
    if &bytes[0..4] != b"AVFR" {
        return Err(fail(0, "missing AVFR magic".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if count == 0 || height == 0 || width == 0 {
        return Err(fail(4, format!("degenerate dimensions {count}x{height}x{width}")));
    }
    let expected = count * height * width;
    let got = bytes.len() - 16;
    if got != expected {
        return Err(fail(
            16,
            format!("expected {expected} pixel bytes for {count}x{height}x{width}, found {got}"),
        ));
    }
    FrameStream::new(height, width, bytes[16..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("avlit-avfr-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trips_bitwise() {
        let data: Vec<u8> = (0..2 * 3 * 4).map(|i| (i * 11 % 256) as u8).collect();
        let s = FrameStream::new(3, 4, data).unwrap();
        assert_eq!(s.count(), 2);
        let p = tmp("clip.avfr");
        write_avfr(&p, &s).unwrap();
        let back = read_avfr(&p).unwrap();
        assert_eq!(back, s);
        let bytes1 = std::fs::read(&p).unwrap();
        write_avfr(&p, &back).unwrap();
        assert_eq!(bytes1, std::fs::read(&p).unwrap());
    }

    #[test]
    fn pixel_values_scale_by_255() {
        let s = FrameStream::new(1, 2, vec![0, 255]).unwrap();
        let t = s.frame_tensor::<f64>(0);
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert_eq!(t.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn truncation_and_magic_errors() {
        let err = parse_avfr(b"AVFR").unwrap_err();
        assert!(err.to_string().contains("16 bytes"), "{err}");

        let mut buf = Vec::new();
        buf.extend_from_slice(b"AVFR");
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&[0u8; 7]); // should be 8
        let err = parse_avfr(&buf).unwrap_err();
        assert!(err.to_string().contains("expected 8"), "{err}");

        let err = parse_avfr(b"NOPE0000000000000").unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }
}
