//! Attention maps as CSV text and 8-bit grayscale PGM.

use std::path::Path;

use nlx_core::decoding::AttentionGrid;

use super::write_bytes;
use crate::Result;

pub fn attention_csv(grid: &AttentionGrid) -> String {
    let mut out = String::new();
    for r in 0..grid.rows {
        let row: Vec<String> = (0..grid.cols).map(|c| format!("{}", grid.at(r, c))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Rescales min to 0 and max to 255. A constant map is all zeros.
pub fn attention_pgm(grid: &AttentionGrid) -> Vec<u8> {
    let lo = grid.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
    out.extend(grid.values.iter().map(|&v| if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 0 }));
    out
}

pub fn write_attention(csv: &Path, pgm: &Path, grid: &AttentionGrid) -> Result<()> {
    write_bytes(csv, attention_csv(grid).as_bytes())?;
    write_bytes(pgm, &attention_pgm(grid))
}
