//! Random token subsets for supervision and global-token dropout.

use rand::seq::index::sample;
use rand::Rng;

use super::SparseDepthMap;
use crate::{Error, Result};

/// `min(k, items.len())` distinct items drawn uniformly, in ascending order
/// of their position in `items`.
pub fn sample_subset<R: Rng + ?Sized>(items: &[usize], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if items.is_empty() {
        return Err(Error::Empty("no items to sample from".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("subset size must be at least 1".into()));
    }
    if k >= items.len() {
        return Ok(items.to_vec());
    }
    let mut picked = sample(rng, items.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i]).collect())
}

/// Up to `l` supervised pixel ids, ascending.
pub fn sample_supervision<R: Rng + ?Sized>(sparse: &SparseDepthMap, l: usize, rng: &mut R) -> Result<Vec<usize>> {
    if sparse.records.is_empty() {
        return Err(Error::Empty("sparse depth map has no records".into()));
    }
    sample_subset(&sparse.pixel_ids(), l, rng)
}

/// Up to `g` of `total` global token indices, ascending.
pub fn sample_global<R: Rng + ?Sized>(total: usize, g: usize, rng: &mut R) -> Result<Vec<usize>> {
    sample_subset(&(0..total).collect::<Vec<_>>(), g, rng)
}
