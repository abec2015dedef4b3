//! Two-class selection and the per-image intensity / symmetry features.

use ipg_core::SeededRng;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::formats::RawImageSet;

/// Images of two classes with labels mapped to `+1` (first class) and `−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySet {
    pub images: RawImageSet,
    pub signs: Vec<f64>,
}

impl BinarySet {
    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }
}

/// Draws `n_target` images uniformly without replacement from those labeled
/// `class_a` or `class_b`, in the sampler's (shuffled) order.
pub fn select_binary(
    raw: &RawImageSet,
    class_a: u8,
    class_b: u8,
    n_target: usize,
    rng: &mut SeededRng,
) -> Result<BinarySet> {
    let pool: Vec<usize> = raw
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == class_a || l == class_b)
        .map(|(i, _)| i)
        .collect();
    if n_target > pool.len() || n_target == 0 {
        return Err(DataError::InsufficientInstances {
            class_a,
            class_b,
            requested: n_target,
            available: pool.len(),
        });
    }
    let picked: Vec<usize> = sample(rng, pool.len(), n_target)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    Ok(relabel(raw.subset(&picked), class_a))
}

/// Every image of the two classes, in stored order.
pub fn all_of_classes(raw: &RawImageSet, class_a: u8, class_b: u8) -> Result<BinarySet> {
    let idx: Vec<usize> = raw
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == class_a || l == class_b)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(DataError::InsufficientInstances {
            class_a,
            class_b,
            requested: 1,
            available: 0,
        });
    }
    Ok(relabel(raw.subset(&idx), class_a))
}

fn relabel(images: RawImageSet, positive: u8) -> BinarySet {
    let signs = images
        .labels()
        .iter()
        .map(|&l| if l == positive { 1.0 } else { -1.0 })
        .collect();
    BinarySet { images, signs }
}

/// Reflection(s) compared against the image to measure symmetry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryMode {
    /// Left-right flip only.
    #[default]
    Horizontal,
    /// Mean of the left-right and the up-down scores.
    BothAxes,
}

/// `(intensity, symmetry)` of one row-major channel with pixels scaled to
/// `[0, 1]`: intensity is the mean pixel, symmetry is `−mean |img − flip(img)|`.
pub fn intensity_symmetry(channel: &[u8], rows: usize, cols: usize, mode: SymmetryMode) -> (f64, f64) {
    debug_assert_eq!(channel.len(), rows * cols);
    let px = |r: usize, c: usize| channel[r * cols + c] as f64 / 255.0;
    let n = (rows * cols) as f64;
    let intensity = channel.iter().map(|&p| p as f64).sum::<f64>() / 255.0 / n;
    let mut lr = 0.0;
    let mut ud = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            lr += (px(r, c) - px(r, cols - 1 - c)).abs();
            ud += (px(r, c) - px(rows - 1 - r, c)).abs();
        }
    }
    let symmetry = match mode {
        SymmetryMode::Horizontal => -lr / n,
        SymmetryMode::BothAxes => -0.5 * (lr + ud) / n,
    };
    (intensity, symmetry)
}
