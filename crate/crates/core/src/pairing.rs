//! View pairs for the alignment objective and cross-image negatives.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::error::{config_err, Error, Result};

/// Unordered pair of view classes, stored with `first < second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ViewPairIndex {
    first: usize,
    second: usize,
}

impl ViewPairIndex {
    pub fn new(a: usize, b: usize) -> Option<Self> {
        match a.cmp(&b) {
            core::cmp::Ordering::Less => Some(Self { first: a, second: b }),
            core::cmp::Ordering::Greater => Some(Self { first: b, second: a }),
            core::cmp::Ordering::Equal => None,
        }
    }

    pub fn first(self) -> usize {
        self.first
    }

    pub fn second(self) -> usize {
        self.second
    }
}

/// All `K(K−1)/2` unordered pairs in lexicographic order.
pub fn enumerate_pairs(k: usize) -> Result<Vec<ViewPairIndex>> {
    if k < 2 {
        return Err(config_err(format!("need at least two views to pair, got {k}")));
    }
    Ok((0..k)
        .flat_map(|a| (a + 1..k).map(move |b| ViewPairIndex { first: a, second: b }))
        .collect())
}

/// `k` distinct pairs drawn uniformly without replacement.
pub fn sample_pair_subset(pairs: &[ViewPairIndex], k: usize, rng: &mut impl Rng) -> Result<Vec<ViewPairIndex>> {
    if k == 0 || k > pairs.len() {
        return Err(config_err(format!("pair subset size {k} outside 1..={}", pairs.len())));
    }
    Ok(index::sample(rng, pairs.len(), k).into_iter().map(|i| pairs[i]).collect())
}

/// A view of one image in a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewRef {
    pub image: usize,
    pub view: usize,
}

/// `count` views drawn uniformly from the images of the batch other than
/// `image_index`.
pub fn draw_negatives(
    batch_size: usize,
    image_index: usize,
    views_per_image: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ViewRef>> {
    if batch_size < 2 {
        return Err(Error::NoNegatives("a batch of one image has no other image to draw from"));
    }
    if image_index >= batch_size || views_per_image == 0 {
        return Err(config_err(format!(
            "image {image_index} / views {views_per_image} invalid for batch of {batch_size}"
        )));
    }
    Ok((0..count)
        .map(|_| {
            let j = rng.random_range(0..batch_size - 1);
            let image = if j >= image_index { j + 1 } else { j };
            let view = rng.random_range(0..views_per_image);
            ViewRef { image, view }
        })
        .collect())
}
