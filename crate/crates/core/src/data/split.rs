use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, NleExample};

/// Seeded image-level split: all examples of one image land in the same part.
pub fn split_dataset(
    examples: &[NleExample],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<NleExample>, Vec<NleExample>, Vec<NleExample>), DataError> {
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 || ratios.iter().any(|r| *r < 0.0) {
        return Err(DataError::Split(format!("ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut by_image: BTreeMap<&str, Vec<&NleExample>> = BTreeMap::new();
    for e in examples {
        by_image.entry(e.image.as_str()).or_default().push(e);
    }
    let mut images: Vec<&str> = by_image.keys().copied().collect();
    images.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = images.len() as f64;
    let n_train = libm::round(ratios[0] * n) as usize;
    let n_val = libm::round(ratios[1] * n) as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= images.len() {
        return Err(DataError::Split(format!("{} images at ratios {ratios:?} leave an empty split", images.len())));
    }
    let collect = |ids: &[&str]| -> Vec<NleExample> {
        let mut out: Vec<NleExample> = ids.iter().flat_map(|i| by_image[i].iter().map(|e| (*e).clone())).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    };
    Ok((
        collect(&images[..n_train]),
        collect(&images[n_train..n_train + n_val]),
        collect(&images[n_train + n_val..]),
    ))
}
