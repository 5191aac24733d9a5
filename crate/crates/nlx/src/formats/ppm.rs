//! Binary 8-bit RGB portable pixmaps.

use std::fs;
use std::path::Path;

use nlx_core::vision::Image;

use super::write_bytes;
use crate::{io_err, NlxError, Result};

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// Reads the header tokens of a P5/P6 file, skipping `#` comments.
fn header(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if bytes.get(i) == Some(&b'#') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    Some((fields, i + 1))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, String> {
    let (h, start) = header(bytes, 4).ok_or("truncated header")?;
    if h[0] != "P6" {
        return Err(format!("expected P6, found {}", h[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let (w, ht, max) = (num(&h[1])?, num(&h[2])?, num(&h[3])?);
    if max != 255 {
        return Err(format!("only 8-bit images are supported, maxval {max}"));
    }
    let raster = bytes.get(start..).ok_or("missing raster")?;
    if raster.len() != w * ht * 3 {
        return Err(format!("raster has {} bytes, expected {}", raster.len(), w * ht * 3));
    }
    Image::new(w, ht, raster.iter().map(|&b| b as f64 / 255.0).collect()).map_err(|e| e.to_string())
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    write_bytes(path, &encode_ppm(image))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes).map_err(|message| NlxError::Format { path: path.into(), message })
}
