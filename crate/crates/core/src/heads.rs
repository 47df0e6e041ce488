//! Classification and box-regression subnets plus anchor-target assignment.
//!
//! Two parallel stacks of 3x3 convolutions, weight-shared across pyramid
//! levels, emit per-anchor class logits and box deltas. Outputs are
//! flattened in the anchor enumeration order so anchor ids index straight
//! into the prediction buffers.

use crate::anchors::AnchorConfig;
use crate::boxes::{encode_boxes, iou, AnchorBox, GroundTruthBox};
use crate::error::{Error, Result};
use crate::layers::Conv2d;
use crate::pyramid::FeaturePyramid;
use crate::tensor::init::Initializer;
use crate::tensor::{ops, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub anchor: AnchorConfig,
    /// Convolutions in each subnet stack before the output layer.
    pub subnet_depth: usize,
    pub num_classes: usize,
    /// Expected foreground probability at initialization; sets the class
    /// output bias to -ln((1-prior)/prior).
    pub prior: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub pos_iou: f64,
    pub neg_iou: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            anchor: AnchorConfig::default(),
            subnet_depth: 2,
            num_classes: 1,
            prior: 0.01,
            alpha: 0.25,
            gamma: 2.0,
            pos_iou: 0.5,
            neg_iou: 0.4,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.subnet_depth == 0 {
            return Err(Error::InvalidConfig(
                "head depth and class count must be positive".to_string(),
            ));
        }
        if !(0.0 < self.prior && self.prior < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "class prior must lie in (0,1), got {}",
                self.prior
            )));
        }
        if self.neg_iou > self.pos_iou {
            return Err(Error::InvalidConfig(format!(
                "negative IoU ceiling {} exceeds positive threshold {}",
                self.neg_iou, self.pos_iou
            )));
        }
        if self.anchor.scales.is_empty() || self.anchor.ratios.is_empty() {
            return Err(Error::InvalidConfig(
                "anchor scales and ratios must be nonempty".to_string(),
            ));
        }
        Ok(())
    }
}

pub struct Heads<T: Scalar> {
    cfg: HeadConfig,
    cls_stack: Vec<Conv2d<T>>,
    cls_out: Conv2d<T>,
    box_stack: Vec<Conv2d<T>>,
    box_out: Conv2d<T>,
}

impl<T: Scalar> Heads<T> {
    pub fn new(cfg: &HeadConfig, channels: usize, init: &mut Initializer) -> Result<Self> {
        cfg.validate()?;
        let a = cfg.anchor.per_cell();
        let cls_stack = (0..cfg.subnet_depth)
            .map(|_| Conv2d::he(init, channels, channels, 3, 1, 1))
            .collect();
        // bias puts the initial foreground probability at the prior
        let cls_bias = -((1.0 - cfg.prior) / cfg.prior).ln();
        let cls_out = Conv2d::head_output(init, channels, a * cfg.num_classes, 3, 0.01, cls_bias);
        let box_stack = (0..cfg.subnet_depth)
            .map(|_| Conv2d::he(init, channels, channels, 3, 1, 1))
            .collect();
        let box_out = Conv2d::head_output(init, channels, a * 4, 3, 0.01, 0.0);
        Ok(Heads {
            cfg: cfg.clone(),
            cls_stack,
            cls_out,
            box_stack,
            box_out,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.cfg
    }

    fn run_stack(stack: &[Conv2d<T>], out: &Conv2d<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut t = x.clone();
        for conv in stack {
            t = ops::relu(&conv.forward(&t)?);
        }
        out.forward(&t)
    }

    /// Per-anchor class logits and box deltas for a single-image pyramid,
    /// flattened in anchor order: logits length = anchors * K, deltas
    /// length = anchors * 4.
    pub fn forward(&self, pyramid: &FeaturePyramid<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if pyramid.batch() != 1 {
            return Err(Error::shape(
                "subnet_forward",
                format!("heads flatten one image at a time, got batch {}", pyramid.batch()),
            ));
        }
        let k = self.cfg.num_classes;
        let mut cls_parts = Vec::with_capacity(pyramid.level_count());
        let mut box_parts = Vec::with_capacity(pyramid.level_count());
        for level in pyramid.levels() {
            let cls_map = Self::run_stack(&self.cls_stack, &self.cls_out, level)?;
            cls_parts.push(ops::flatten_anchor_major(&cls_map, k)?);
            let box_map = Self::run_stack(&self.box_stack, &self.box_out, level)?;
            box_parts.push(ops::flatten_anchor_major(&box_map, 4)?);
        }
        Ok((ops::concat_flat(&cls_parts)?, ops::concat_flat(&box_parts)?))
    }

    pub fn collect_params<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Tensor<T>)>,
    ) {
        for (i, conv) in self.cls_stack.iter_mut().enumerate() {
            conv.collect_params(&format!("{prefix}.cls{i}"), out);
        }
        self.cls_out.collect_params(&format!("{prefix}.cls_out"), out);
        for (i, conv) in self.box_stack.iter_mut().enumerate() {
            conv.collect_params(&format!("{prefix}.box{i}"), out);
        }
        self.box_out.collect_params(&format!("{prefix}.box_out"), out);
    }
}

/// Training label of one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorLabel {
    /// Matched to the given ground-truth index.
    Positive(usize),
    Negative,
    /// In the IoU band between the negative ceiling and positive threshold;
    /// excluded from the classification loss.
    Ignore,
}

/// Per-anchor labels and, for positives, encoded regression targets.
pub struct Assignment {
    pub labels: Vec<AnchorLabel>,
    pub targets: Vec<Option<[f64; 4]>>,
}

impl Assignment {
    pub fn positive_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, AnchorLabel::Positive(_)))
            .count()
    }
}

/// IoU-threshold assignment: an anchor is positive when its best ground
/// truth reaches `pos_thr` (ties to the lowest index), negative below
/// `neg_thr`, ignored in between. Afterwards each ground-truth box forces
/// its single best-IoU anchor positive so no annotated box goes unmatched,
/// unless that anchor already holds a strictly better match.
pub fn assign_targets(
    anchors: &[AnchorBox],
    gts: &[GroundTruthBox],
    pos_thr: f64,
    neg_thr: f64,
) -> Result<Assignment> {
    let mut labels = vec![AnchorLabel::Negative; anchors.len()];
    let mut best_iou = vec![0.0f64; anchors.len()];
    if gts.is_empty() {
        return Ok(Assignment {
            labels,
            targets: vec![None; anchors.len()],
        });
    }

    for (ai, anchor) in anchors.iter().enumerate() {
        let rect = anchor.to_xywh();
        let mut best = 0.0;
        let mut best_gt = 0;
        for (gi, gt) in gts.iter().enumerate() {
            let v = iou(&rect, &gt.rect)?;
            if v > best {
                best = v;
                best_gt = gi;
            }
        }
        best_iou[ai] = best;
        labels[ai] = if best >= pos_thr {
            AnchorLabel::Positive(best_gt)
        } else if best < neg_thr {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
    }

    // coverage guarantee: each ground truth claims its best anchor
    for (gi, gt) in gts.iter().enumerate() {
        let mut best = -1.0;
        let mut best_anchor = 0;
        for (ai, anchor) in anchors.iter().enumerate() {
            let v = iou(&anchor.to_xywh(), &gt.rect)?;
            if v > best {
                best = v;
                best_anchor = ai;
            }
        }
        match labels[best_anchor] {
            AnchorLabel::Positive(other) if other != gi && best_iou[best_anchor] > best => {}
            _ => {
                labels[best_anchor] = AnchorLabel::Positive(gi);
                best_iou[best_anchor] = best;
            }
        }
    }

    let mut targets = vec![None; anchors.len()];
    for (ai, label) in labels.iter().enumerate() {
        if let AnchorLabel::Positive(gi) = label {
            targets[ai] = Some(encode_boxes(&gts[*gi].rect, &anchors[ai])?);
        }
    }
    Ok(Assignment { labels, targets })
}
