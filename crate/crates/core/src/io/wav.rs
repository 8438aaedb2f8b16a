//! Mono WAV read/write supporting 16-bit PCM and 32-bit IEEE float.
//!
//! Quantization contract for PCM16: write maps `v` to
//! `round(clamp(v, -1, 1) * 32767)`, read maps `q` back to `q / 32767`, so
//! a second write reproduces the first file byte for byte. Float32 files
//! round-trip bitwise.

use crate::error::{Error, Result};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Int16,
    Float32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WavSpec {
    pub sample_rate: u32,
    pub format: SampleFormat,
}

pub fn write_wav<T: Scalar>(
    path: &Path,
    samples: &Tensor<T>,
    sample_rate: u32,
    format: SampleFormat,
) -> Result<()> {
    if samples.rank() != 1 {
        return Err(Error::ShapeMismatch {
            op: "write_wav",
            expected: vec![0],
            got: samples.shape().to_vec(),
        });
    }
    let n = samples.numel();
    let (fmt_code, bits): (u16, u16) = match format {
        SampleFormat::Int16 => (1, 16),
        SampleFormat::Float32 => (3, 32),
    };
    let bytes_per = (bits / 8) as u32;
    let data_len = n as u32 * bytes_per;
    let fact_len: u32 = if format == SampleFormat::Float32 { 12 } else { 0 };
    let riff_len = 4 + (8 + 16) + fact_len + (8 + data_len);

    let mut buf = Vec::with_capacity(riff_len as usize + 8);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&riff_len.to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&fmt_code.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes()); // mono
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    buf.extend_from_slice(&(sample_rate * bytes_per).to_le_bytes());
    buf.extend_from_slice(&(bytes_per as u16).to_le_bytes());
    buf.extend_from_slice(&bits.to_le_bytes());
    if format == SampleFormat::Float32 {
        buf.extend_from_slice(b"fact");
        buf.extend_from_slice(&4u32.to_le_bytes());
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_len.to_le_bytes());
    match format {
        SampleFormat::Int16 => {
            for &v in samples.as_slice() {
                buf.extend_from_slice(&quantize_i16(v.to_f64v()).to_le_bytes());
            }
        }
        SampleFormat::Float32 => {
            for &v in samples.as_slice() {
                buf.extend_from_slice(&v.to_f32v().to_le_bytes());
            }
        }
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn read_wav<T: Scalar>(path: &Path) -> Result<(Tensor<T>, WavSpec)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

pub fn parse_wav<T: Scalar>(bytes: &[u8]) -> Result<(Tensor<T>, WavSpec)> {
    let fail = |offset: usize, detail: String| Error::Parse {
        what: "wav",
        offset: offset as u64,
        detail,
    };
    if bytes.len() < 12 {
        return Err(fail(0, format!("file too short: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(fail(0, "missing RIFF magic".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(fail(8, "missing WAVE form type".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16, usize)> = None; // code, channels, rate, bits, offset
    let mut data: Option<(usize, usize)> = None; // offset, len
    let mut off = 12usize;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap()) as usize;
        let payload = off + 8;
        if payload + size > bytes.len() {
            return Err(fail(
                off,
                format!(
                    "chunk {:?} claims {size} bytes but only {} remain",
                    String::from_utf8_lossy(id),
                    bytes.len() - payload
                ),
            ));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fail(payload, format!("fmt chunk too small: {size}")));
                }
                let code = u16::from_le_bytes(bytes[payload..payload + 2].try_into().unwrap());
                let channels =
                    u16::from_le_bytes(bytes[payload + 2..payload + 4].try_into().unwrap());
                let rate =
                    u32::from_le_bytes(bytes[payload + 4..payload + 8].try_into().unwrap());
                let bits =
                    u16::from_le_bytes(bytes[payload + 14..payload + 16].try_into().unwrap());
                fmt = Some((code, channels, rate, bits, payload));
            }
            b"data" => data = Some((payload, size)),
            _ => {} // fact and any other chunks are informational
        }
        off = payload + size + (size & 1);
    }

    let (code, channels, rate, bits, fmt_off) =
        fmt.ok_or_else(|| fail(bytes.len(), "no fmt chunk".into()))?;
    let (data_off, data_len) = data.ok_or_else(|| fail(bytes.len(), "no data chunk".into()))?;
    if channels != 1 {
        return Err(fail(
            fmt_off,
            format!("only mono is supported, file has {channels} channels"),
        ));
    }
    let format = match (code, bits) {
        (1, 16) => SampleFormat::Int16,
        (3, 32) => SampleFormat::Float32,
        _ => {
            return Err(fail(
                fmt_off,
                format!("unsupported format code {code} with {bits} bits"),
            ))
        }
    };
    let bytes_per = match format {
        SampleFormat::Int16 => 2,
        SampleFormat::Float32 => 4,
    };
    if data_len % bytes_per != 0 {
        return Err(fail(
            data_off,
            format!("data length {data_len} not a multiple of {bytes_per}"),
        ));
    }
    let n = data_len / bytes_per;
    let mut out = Vec::with_capacity(n);
    match format {
        SampleFormat::Int16 => {
            for i in 0..n {
                let p = data_off + i * 2;
                let q = i16::from_le_bytes(bytes[p..p + 2].try_into().unwrap());
                out.push(T::from_f64(q as f64 / 32767.0));
            }
        }
        SampleFormat::Float32 => {
            for i in 0..n {
                let p = data_off + i * 4;
                let v = f32::from_le_bytes(bytes[p..p + 4].try_into().unwrap());
                out.push(T::from_f32(v));
            }
        }
    }
    Ok((
        Tensor::from_vec(vec![n], out)?,
        WavSpec {
            sample_rate: rate,
            format,
        },
    ))
}

fn quantize_i16(v: f64) -> i16 {
    (v.clamp(-1.0, 1.0) * 32767.0).round() as i16
}
