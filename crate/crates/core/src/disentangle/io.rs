//! Mask files and portable pixmaps for inspection.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MASK_MAGIC: &[u8; 4] = b"DMSK";
const HEADER: usize = 12;

/// Writes `b"DMSK"`, u32 LE height, u32 LE width, then one byte per pixel (0 or 255).
pub fn write_mask_file(path: &Path, height: usize, width: usize, flags: &[u8]) -> Result<()> {
    if flags.len() != height * width {
        return Err(Error::Shape(format!("{} mask values for {height}x{width}", flags.len())));
    }
    let mut bytes = Vec::with_capacity(HEADER + flags.len());
    bytes.extend_from_slice(MASK_MAGIC);
    bytes.extend_from_slice(&(height as u32).to_le_bytes());
    bytes.extend_from_slice(&(width as u32).to_le_bytes());
    bytes.extend(flags.iter().map(|&f| if f > 0 { 255 } else { 0 }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a mask file into `(height, width, flags)` with flags 0/1.
pub fn read_mask_file(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER || &bytes[..4] != MASK_MAGIC {
        return Err(Error::format(path, "not a mask file"));
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[HEADER..];
    if body.len() != height * width {
        return Err(Error::format(
            path,
            format!("expected {} mask bytes, found {}", height * width, body.len()),
        ));
    }
    let mut flags = Vec::with_capacity(body.len());
    for (i, &b) in body.iter().enumerate() {
        match b {
            0 => flags.push(0),
            255 => flags.push(1),
            other => {
                return Err(Error::format(
                    path,
                    format!("mask byte {other} at offset {i} is neither 0 nor 255"),
                ))
            }
        }
    }
    Ok((height, width, flags))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grayscale binary PGM of values in `[0, 1]`.
pub fn write_pgm(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::Shape(format!("{} values for {height}x{width}", values.len())));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|&v| to_byte(v)));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Color binary PPM from a channel-major `[3, h, w]` buffer in `[0, 1]`.
pub fn write_ppm(path: &Path, height: usize, width: usize, chw: &[f64]) -> Result<()> {
    let n = height * width;
    if chw.len() != 3 * n {
        return Err(Error::Shape(format!("{} values for 3x{height}x{width}", chw.len())));
    }
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    for i in 0..n {
        for ch in 0..3 {
            bytes.push(to_byte(chw[ch * n + i]));
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
