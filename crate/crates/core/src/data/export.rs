//! Image outputs: 16-bit grayscale PNG for viewing, raw little-endian f32
//! for exact values.

use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};

pub fn save_png(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != width * height {
        return Err(Error::Contract(format!(
            "image has {} pixels, expected {width}x{height}",
            pixels.len()
        )));
    }
    let data: Vec<u16> = pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, data).expect("buffer size checked above");
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

pub fn save_raw_f32(path: impl AsRef<Path>, pixels: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = pixels.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_raw_f32(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            (bytes.len() / 4 * 4) as u64,
            "raw f32 file length is not a multiple of 4",
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
