//! Anchor grid generation over the feature pyramid.
//!
//! Enumeration order is part of the contract: level-major, then row-major
//! over cells, then scale, then ratio. Head outputs are flattened in the
//! same order, so anchor ids index directly into the prediction buffers.

use crate::boxes::AnchorBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            scales: vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

impl AnchorConfig {
    /// Anchors spawned per feature-map cell.
    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

/// Spawns anchors for every cell of every pyramid level. A level of width W
/// on an image of size S has stride s = S/W; cell (row, col) centers its
/// anchors at ((col+0.5)s, (row+0.5)s) with base size 4s. Ratio r reshapes
/// the box to w = size/sqrt(r), h = size*sqrt(r), preserving area.
pub fn generate_anchors(
    level_shapes: &[(usize, usize)],
    image_size: usize,
    cfg: &AnchorConfig,
) -> Result<Vec<AnchorBox>> {
    let mut anchors = Vec::new();
    let mut id = 0;
    for (level, &(h, w)) in level_shapes.iter().enumerate() {
        if h == 0 || w == 0 || image_size % w != 0 {
            return Err(Error::shape(
                "generate_anchors",
                format!("level {level} of {h}x{w} does not divide image size {image_size}"),
            ));
        }
        let stride = (image_size / w) as f64;
        let base = 4.0 * stride;
        for row in 0..h {
            for col in 0..w {
                let cx = (col as f64 + 0.5) * stride;
                let cy = (row as f64 + 0.5) * stride;
                for &scale in &cfg.scales {
                    let size = base * scale;
                    for &ratio in &cfg.ratios {
                        let sqrt_r = ratio.sqrt();
                        anchors.push(AnchorBox {
                            cx,
                            cy,
                            w: size / sqrt_r,
                            h: size * sqrt_r,
                            level,
                            id,
                        });
                        id += 1;
                    }
                }
            }
        }
    }
    Ok(anchors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_single_anchor_per_cell() {
        let cfg = AnchorConfig {
            scales: vec![1.0],
            ratios: vec![1.0],
        };
        let anchors = generate_anchors(&[(2, 2)], 16, &cfg).unwrap();
        assert_eq!(anchors.len(), 4);
        let centers: Vec<(f64, f64)> = anchors.iter().map(|a| (a.cx, a.cy)).collect();
        assert_eq!(
            centers,
            vec![(4.0, 4.0), (12.0, 4.0), (4.0, 12.0), (12.0, 12.0)]
        );
        for a in &anchors {
            assert_eq!((a.w, a.h), (32.0, 32.0));
        }
    }

    #[test]
    fn counting_arithmetic_over_two_levels() {
        let cfg = AnchorConfig::default();
        let anchors = generate_anchors(&[(8, 8), (4, 4)], 64, &cfg).unwrap();
        assert_eq!(anchors.len(), 9 * (64 + 16));
        // ids are the enumeration order
        for (i, a) in anchors.iter().enumerate() {
            assert_eq!(a.id, i);
        }
    }

    #[test]
    fn ratio_preserves_area() {
        let cfg = AnchorConfig {
            scales: vec![1.0],
            ratios: vec![1.0, 2.0],
        };
        let anchors = generate_anchors(&[(1, 1)], 16, &cfg).unwrap();
        let square = &anchors[0];
        let tall = &anchors[1];
        assert!((tall.h / tall.w - 2.0).abs() < 1e-9);
        assert!((tall.w * tall.h - square.w * square.h).abs() < 1e-9);
    }

    #[test]
    fn centers_stay_inside_image() {
        let anchors = generate_anchors(&[(16, 16), (8, 8)], 64, &AnchorConfig::default()).unwrap();
        for a in &anchors {
            assert!(a.cx > 0.0 && a.cx < 64.0 && a.cy > 0.0 && a.cy < 64.0);
        }
    }
}
