//! Grayscale slice files: 16-bit PNG and the raw `AMAC` float container.
//!
//! `AMAC` layout: the four magic bytes `AMAC`, `u32` height, `u32` width
//! (both little-endian), then `height * width` little-endian `f32` values in
//! row-major order.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageReader, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};

pub const AMAC_MAGIC: &[u8; 4] = b"AMAC";
const AMAC_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    /// Lossless float container.
    Amac,
    /// 16-bit grayscale PNG; values are rounded and clamped to `0..=65535`.
    Png16,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Amac => "amac",
            ImageFormat::Png16 => "png",
        }
    }
}

pub fn read_image(path: &Path) -> Result<Array2<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(AMAC_MAGIC) {
        decode_amac(&bytes).map_err(|reason| Error::Image {
            path: path.to_path_buf(),
            reason,
        })
    } else {
        decode_raster(&bytes).map_err(|reason| Error::Image {
            path: path.to_path_buf(),
            reason,
        })
    }
}

pub fn write_image(path: &Path, pixels: &Array2<f32>, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Amac => encode_amac(pixels),
        ImageFormat::Png16 => encode_png16(pixels).map_err(|reason| Error::Image {
            path: path.to_path_buf(),
            reason,
        })?,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_amac(pixels: &Array2<f32>) -> Vec<u8> {
    let (h, w) = pixels.dim();
    let mut out = Vec::with_capacity(AMAC_HEADER_LEN + 4 * h * w);
    out.extend_from_slice(AMAC_MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in pixels.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_amac(bytes: &[u8]) -> std::result::Result<Array2<f32>, String> {
    if bytes.len() < AMAC_HEADER_LEN || &bytes[..4] != AMAC_MAGIC {
        return Err("missing AMAC header".into());
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(AMAC_HEADER_LEN))
        .ok_or("AMAC dimensions overflow")?;
    if bytes.len() != expected {
        return Err(format!(
            "AMAC payload is {} bytes, header {h}x{w} needs {expected}",
            bytes.len()
        ));
    }
    let values = bytes[AMAC_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((h, w), values).map_err(|e| e.to_string())
}

fn decode_raster(bytes: &[u8]) -> std::result::Result<Array2<f32>, String> {
    let img = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())?;
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    let values = luma.into_raw().into_iter().map(f32::from).collect();
    Array2::from_shape_vec((h as usize, w as usize), values).map_err(|e| e.to_string())
}

fn encode_png16(pixels: &Array2<f32>) -> std::result::Result<Vec<u8>, String> {
    let (h, w) = pixels.dim();
    let raw: Vec<u16> = pixels
        .iter()
        .map(|&v| v.round().clamp(0.0, f32::from(u16::MAX)) as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).ok_or("pixel buffer size mismatch")?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Array2<f32> {
        Array2::from_shape_fn((33, 40), |(r, c)| (r * 40 + c) as f32 * 1.5)
    }

    #[test]
    fn amac_round_trip_is_exact() {
        let img = ramp().mapv(|v| v.sin() * 1e3);
        assert_eq!(decode_amac(&encode_amac(&img)).unwrap(), img);
    }

    #[test]
    fn amac_rejects_truncated_payload() {
        let mut bytes = encode_amac(&ramp());
        bytes.pop();
        assert!(decode_amac(&bytes).is_err());
    }

    #[test]
    fn png16_round_trip_for_integer_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slice.png");
        let img = ramp().mapv(f32::round);
        write_image(&path, &img, ImageFormat::Png16).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }
}
