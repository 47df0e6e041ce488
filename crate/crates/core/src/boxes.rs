//! Axis-aligned boxes, IoU, and the anchor delta encoding.
//!
//! All box geometry runs in f64 regardless of the training precision, so
//! evaluation numbers do not depend on the compute-core float width.

use crate::error::{Error, Result};

/// Corner-plus-size box in image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxXYWH {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxXYWH {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoxXYWH { x, y, w, h }
    }

    pub fn x_max(&self) -> f64 {
        self.x + self.w
    }

    pub fn y_max(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn has_positive_extent(&self) -> bool {
        self.w > 0.0 && self.h > 0.0
    }

    /// Clips to [0, size] on both axes; the result may be degenerate.
    pub fn clip(&self, size: f64) -> BoxXYWH {
        let x1 = self.x.clamp(0.0, size);
        let y1 = self.y.clamp(0.0, size);
        let x2 = self.x_max().clamp(0.0, size);
        let y2 = self.y_max().clamp(0.0, size);
        BoxXYWH::new(x1, y1, x2 - x1, y2 - y1)
    }
}

/// Intersection over union of two boxes; 0 when disjoint, 1 for identical.
pub fn iou(a: &BoxXYWH, b: &BoxXYWH) -> Result<f64> {
    for bx in [a, b] {
        if !bx.has_positive_extent() {
            return Err(Error::DegenerateBox {
                width: bx.w,
                height: bx.h,
            });
        }
    }
    let ix = (a.x_max().min(b.x_max()) - a.x.max(b.x)).max(0.0);
    let iy = (a.y_max().min(b.y_max()) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

/// A candidate box spawned at a feature-map cell, with its provenance.
#[derive(Debug, Clone, Copy)]
pub struct AnchorBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Pyramid level index (0 = finest).
    pub level: usize,
    /// Flat enumeration index; fixes all tie-breaking orders.
    pub id: usize,
}

impl AnchorBox {
    pub fn to_xywh(&self) -> BoxXYWH {
        BoxXYWH::new(self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)
    }
}

/// An annotated lesion box. Class ids are structural (K is configurable)
/// but the dataset uses a single class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub rect: BoxXYWH,
    pub class_id: usize,
}

/// Regression targets of a ground-truth box relative to an anchor:
/// (dx, dy) are center offsets in anchor units, (dw, dh) log size ratios.
pub fn encode_boxes(gt: &BoxXYWH, anchor: &AnchorBox) -> Result<[f64; 4]> {
    if !gt.has_positive_extent() {
        return Err(Error::DegenerateBox {
            width: gt.w,
            height: gt.h,
        });
    }
    let (gx, gy) = gt.center();
    Ok([
        (gx - anchor.cx) / anchor.w,
        (gy - anchor.cy) / anchor.h,
        (gt.w / anchor.w).ln(),
        (gt.h / anchor.h).ln(),
    ])
}

/// Caps the size deltas so exp stays finite on untrained network output.
const MAX_SIZE_DELTA: f64 = 4.135166556742356; // ln(1000/16)

/// Inverse of `encode_boxes`, before clipping to the image.
pub fn decode_boxes_raw(anchor: &AnchorBox, deltas: [f64; 4]) -> BoxXYWH {
    let [dx, dy, dw, dh] = deltas;
    let cx = anchor.cx + dx * anchor.w;
    let cy = anchor.cy + dy * anchor.h;
    let w = anchor.w * dw.min(MAX_SIZE_DELTA).exp();
    let h = anchor.h * dh.min(MAX_SIZE_DELTA).exp();
    BoxXYWH::new(cx - w / 2.0, cy - h / 2.0, w, h)
}

/// Decodes deltas against an anchor and clips the result to the image.
pub fn decode_boxes(anchor: &AnchorBox, deltas: [f64; 4], image_size: f64) -> BoxXYWH {
    decode_boxes_raw(anchor, deltas).clip(image_size)
}
