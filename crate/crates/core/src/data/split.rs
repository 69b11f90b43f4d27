//! Train/valid/test split that never separates a recording.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WEIGHTS: [f64; 3] = [0.3, 0.35, 0.35];

/// Recording ids of each part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.train, &self.valid, &self.test]
    }
}

/// Partitions recordings `(id, slice count)` so the slice totals follow
/// `weights`. Recordings are shuffled with `seed`, ordered by decreasing
/// size (ties keep the shuffled order), and each goes to the part with the
/// largest remaining deficit, the earlier part on ties. No part is left
/// empty.
pub fn split_by_recording(recordings: &[(usize, usize)], weights: [f64; 3], seed: u64) -> Result<Split> {
    if recordings.len() < 3 {
        return Err(Error::InvalidArgument(format!("{} recordings; at least 3 needed", recordings.len())));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidArgument("split weights must be positive".into()));
    }
    let mut ids: Vec<usize> = recordings.iter().map(|r| r.0).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate recording id".into()));
    }
    let mut order = recordings.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|a, b| b.1.cmp(&a.1));

    let total: usize = order.iter().map(|r| r.1).sum();
    let wsum: f64 = weights.iter().sum();
    let target: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut filled = [0usize; 3];
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (k, &(id, size)) in order.iter().enumerate() {
        let left = order.len() - k;
        let empty: Vec<usize> = (0..3).filter(|&p| parts[p].is_empty()).collect();
        let candidates: Vec<usize> = if empty.len() >= left { empty } else { (0..3).collect() };
        let p = candidates
            .iter()
            .copied()
            .fold(None::<(usize, f64)>, |best, p| {
                let d = target[p] - filled[p] as f64;
                match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((p, d)),
                }
            })
            .expect("a candidate part")
            .0;
        parts[p].push(id);
        filled[p] += size;
    }
    let [mut train, mut valid, mut test] = parts;
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, valid, test })
}
