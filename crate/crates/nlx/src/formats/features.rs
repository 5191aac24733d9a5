//! Precomputed grid features: a binary file with a `{Y, d, count}` header and
//! row-major `f32` arrays, plus a JSON index from image id to array number.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nlx_core::numerics::Tensor;
use nlx_core::vision::GridFeatures;
use serde::{Deserialize, Serialize};

use super::{read_json, write_bytes, write_json};
use crate::{io_err, NlxError, Result};

pub const MAGIC: &[u8; 8] = b"NLXFEAT\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub grid: (usize, usize),
    pub ids: BTreeMap<String, usize>,
}

/// All entries must share one grid and width.
pub fn write_features(bin: &Path, index: &Path, entries: &[(String, GridFeatures)]) -> Result<()> {
    let bad = |message: String| NlxError::Format { path: bin.into(), message };
    let (_, first) = entries.first().ok_or_else(|| bad("no features to write".into()))?;
    let (grid, y, d) = (first.grid(), first.num_patches(), first.dim());
    let mut out = MAGIC.to_vec();
    for v in [y as u32, d as u32, entries.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut ids = BTreeMap::new();
    for (i, (id, f)) in entries.iter().enumerate() {
        if f.grid() != grid || f.dim() != d {
            return Err(bad(format!("{id} has grid {:?} width {}, expected {grid:?} width {d}", f.grid(), f.dim())));
        }
        if ids.insert(id.clone(), i).is_some() {
            return Err(bad(format!("duplicate id {id}")));
        }
        for &v in f.tensor().data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_bytes(bin, &out)?;
    write_json(index, &FeatureIndex { grid, ids })
}

pub fn read_features(bin: &Path, index: &Path) -> Result<BTreeMap<String, GridFeatures>> {
    let bytes = fs::read(bin).map_err(io_err(bin))?;
    let bad = |message: String| NlxError::Format { path: bin.into(), message };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a feature file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (y, d, count) = (word(0), word(1), word(2));
    if bytes.len() != 20 + 4 * y * d * count {
        return Err(bad(format!("{} bytes, header promises {count} arrays of {y}x{d}", bytes.len())));
    }
    let idx: FeatureIndex = read_json(index)?;
    if idx.grid.0 * idx.grid.1 != y {
        return Err(bad(format!("index grid {:?} does not have {y} patches", idx.grid)));
    }
    let mut out = BTreeMap::new();
    for (id, &i) in &idx.ids {
        if i >= count {
            return Err(bad(format!("{id} points at array {i} of {count}")));
        }
        let start = 20 + 4 * y * d * i;
        let data = bytes[start..start + 4 * y * d]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        out.insert(id.clone(), GridFeatures::new(Tensor::new(vec![y, d], data)?, idx.grid)?);
    }
    Ok(out)
}
