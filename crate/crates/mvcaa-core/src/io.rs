//! On-disk formats: the MVT1 tensor container and binary PPM images.
//!
//! MVT1 layout: bytes 0-3 magic `MVT1`, u32 little-endian header length, a
//! UTF-8 JSON header `{"dtype":"f32"|"f64","shape":[...],"order":"row-major"}`,
//! then the raw little-endian payload.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MVT1";

#[derive(Serialize, Deserialize)]
struct Mvt1Header {
    dtype: String,
    shape: Vec<usize>,
    order: String,
}

pub fn write_tensor<S: Scalar, P: AsRef<Path>>(path: P, t: &Tensor<S>) -> Result<()> {
    let mut f = std::fs::File::create(path.as_ref())?;
    let header = Mvt1Header {
        dtype: S::DTYPE.to_string(),
        shape: t.shape().to_vec(),
        order: "row-major".to_string(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    f.write_all(MAGIC)?;
    f.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    let mut payload = Vec::with_capacity(t.numel() * S::WIDTH);
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes_vec());
    }
    f.write_all(&payload)?;
    Ok(())
}

/// Read a tensor, converting the stored dtype to `S` if they differ.
pub fn read_tensor<S: Scalar, P: AsRef<Path>>(path: P) -> Result<Tensor<S>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_tensor(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_tensor<S: Scalar>(bytes: &[u8]) -> Result<Tensor<S>> {
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(Error::Data("not an MVT1 tensor (bad magic)".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + hlen {
        return Err(Error::Data("truncated MVT1 header".into()));
    }
    let header: Mvt1Header = serde_json::from_slice(&bytes[8..8 + hlen])?;
    if header.order != "row-major" {
        return Err(Error::Data(format!("unsupported order {}", header.order)));
    }
    let numel: usize = header.shape.iter().product();
    let payload = &bytes[8 + hlen..];
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Data(format!("unsupported dtype {other}"))),
    };
    if payload.len() != numel * width {
        return Err(Error::Data(format!(
            "payload length {} does not match shape {:?} * {width}",
            payload.len(),
            header.shape
        )));
    }
    let data: Vec<S> = match header.dtype.as_str() {
        "f32" => payload.chunks_exact(4).map(|c| S::from_f64(f32::from_le_slice(c).to_f64())).collect(),
        _ => payload.chunks_exact(8).map(|c| S::from_f64(f64::from_le_slice(c))).collect(),
    };
    Ok(Tensor::from_vec(&header.shape, data))
}

/// Write an `[H, W, 3]` float image in [0,1] as binary PPM (P6, maxval 255).
pub fn write_ppm<S: Scalar, P: AsRef<Path>>(path: P, img: &Tensor<S>) -> Result<()> {
    let shape = img.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::Invalid(format!("ppm wants [h,w,3], got {:?}", shape)));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut f = std::fs::File::create(path)?;
    write!(f, "P6\n{w} {h}\n255\n")?;
    let mut buf = Vec::with_capacity(h * w * 3);
    for v in img.data() {
        let x = (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        buf.push(x);
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Read a binary PPM into an `[H, W, 3]` float image scaled to [0,1].
pub fn read_ppm<S: Scalar, P: AsRef<Path>>(path: P) -> Result<Tensor<S>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("truncated ppm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P6" {
        return Err(Error::Data("expected P6 ppm".into()));
    }
    let w: usize = token(&bytes)?.parse().map_err(|_| Error::Data("bad ppm width".into()))?;
    let h: usize = token(&bytes)?.parse().map_err(|_| Error::Data("bad ppm height".into()))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| Error::Data("bad ppm maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Data(format!("unsupported ppm maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(Error::Data("truncated ppm payload".into()));
    }
    let data: Vec<S> = bytes[pos..pos + need].iter().map(|&b| S::from_f64(b as f64 / 255.0)).collect();
    Ok(Tensor::from_vec(&[h, w, 3], data))
}

pub fn read_json<T: serde::de::DeserializeOwned, P: AsRef<Path>>(path: P) -> Result<T> {
    let bytes = std::fs::read(path.as_ref())?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json<T: Serialize, P: AsRef<Path>>(path: P, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s.as_bytes())?;
    Ok(())
}
