//! Multi-scale feature pyramids.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Number of pyramid levels the detector runs on.
pub const PYRAMID_LEVELS: usize = 5;

/// An ordered sequence of feature maps, finest (largest spatial size) first,
/// with a shared channel count and exact 2x halving between neighbours.
///
/// The full detector always carries [`PYRAMID_LEVELS`] levels; the type
/// itself accepts any count so the top-down recursion's base case can be
/// exercised on degenerate pyramids.
pub struct FeaturePyramid<T: Scalar> {
    levels: Vec<Tensor<T>>,
}

impl<T: Scalar> FeaturePyramid<T> {
    pub fn new(levels: Vec<Tensor<T>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::shape("pyramid", "no levels".to_string()));
        }
        let first = levels[0].shape();
        if first.len() != 4 {
            return Err(Error::shape(
                "pyramid",
                format!("levels must be 4-D, got {first:?}"),
            ));
        }
        let (n, c) = (first[0], first[1]);
        for pair in levels.windows(2) {
            let (a, b) = (pair[0].shape(), pair[1].shape());
            if b.len() != 4 || b[0] != n || b[1] != c {
                return Err(Error::shape(
                    "pyramid",
                    format!("inconsistent batch/channels: {a:?} then {b:?}"),
                ));
            }
            if a[2] != 2 * b[2] || a[3] != 2 * b[3] {
                return Err(Error::shape(
                    "pyramid",
                    format!("levels must halve: {a:?} then {b:?}"),
                ));
            }
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn levels(&self) -> &[Tensor<T>] {
        &self.levels
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn channels(&self) -> usize {
        self.levels[0].shape()[1]
    }

    pub fn batch(&self) -> usize {
        self.levels[0].shape()[0]
    }

    /// (height, width) of each level, finest first.
    pub fn spatial_shapes(&self) -> Vec<(usize, usize)> {
        self.levels
            .iter()
            .map(|l| (l.shape()[2], l.shape()[3]))
            .collect()
    }
}
