//! Float sidecars and 8-bit PNG files.
//!
//! Sidecar layout (little endian): magic `HRF1`, `u32` format version,
//! `u32` bytes per value (4 or 8), `u32` C, H, W, then C·H·W values.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"HRF1";
const SIDECAR_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

pub fn write_sidecar(path: &Path, tensor: &Tensor, precision: Precision) -> Result<()> {
    let (c, h, w) = tensor.chw()?;
    let width = match precision {
        Precision::F32 => 4u32,
        Precision::F64 => 8u32,
    };
    let mut bytes = Vec::with_capacity(24 + tensor.len() * width as usize);
    bytes.extend_from_slice(MAGIC);
    for v in [SIDECAR_VERSION, width, c as u32, h as u32, w as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &v in tensor.data() {
        match precision {
            Precision::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            Precision::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(Error::corrupt(path, "not a float sidecar"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != SIDECAR_VERSION as usize {
        return Err(Error::corrupt(path, format!("unsupported sidecar version {}", word(0))));
    }
    let (width, c, h, w) = (word(1), word(2), word(3), word(4));
    let n = c * h * w;
    if !(width == 4 || width == 8) || bytes.len() != 24 + n * width {
        return Err(Error::corrupt(path, "sidecar length does not match its header"));
    }
    let body = &bytes[24..];
    let data: Vec<f64> = if width == 4 {
        body.chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect()
    } else {
        body.chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect()
    };
    Tensor::new(vec![c, h, w], data).map_err(|e| Error::corrupt(path, e.to_string()))
}

/// Writes an 8-bit PNG; `channels` is 1 (grey) or 3 (RGB), `pixels` is
/// interleaved. Optional text chunks are stored as `tEXt`.
pub fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    pixels: &[u8],
    text: &[(&str, &str)],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(if channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    encoder.set_depth(png::BitDepth::Eight);
    for (k, v) in text {
        encoder
            .add_text_chunk(k.to_string(), v.to_string())
            .map_err(|e| Error::corrupt(path, e.to_string()))?;
    }
    let mut writer = encoder.write_header().map_err(|e| png_error(path, e))?;
    writer.write_image_data(pixels).map_err(|e| png_error(path, e))?;
    writer.finish().map_err(|e| png_error(path, e))?;
    Ok(())
}

pub struct PngImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
    pub text: Vec<(String, String)>,
}

pub fn read_png(path: &Path) -> Result<PngImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| png_error(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::corrupt(path, "expected an 8-bit PNG"));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::corrupt(path, format!("unsupported colour type {other:?}"))),
    };
    buf.truncate(info.buffer_size());
    let text = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect();
    Ok(PngImage {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        pixels: buf,
        text,
    })
}

fn png_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::corrupt(path, e.to_string())
}

/// Interleaved 8-bit RGB bytes of a 3×H×W tensor with values in [0, 1].
pub fn to_rgb8(image: &Tensor) -> Vec<u8> {
    let (_, h, w) = image.dims();
    let d = image.data();
    let mut out = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for ch in 0..3 {
            out.push((d[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::corrupt(path, e.to_string()))
}
