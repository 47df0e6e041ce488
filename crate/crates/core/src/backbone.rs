//! Residual convolutional backbone producing the five-level feature pyramid.
//!
//! A reduced residual network stands in for a full classification backbone:
//! a strided stem followed by five stages, each opening with a stride-2
//! block, so the pyramid spans input/4 down to input/64. All stages emit the
//! same channel count, which is also the pyramid width.

use crate::error::{Error, Result};
use crate::layers::Conv2d;
use crate::pyramid::{FeaturePyramid, PYRAMID_LEVELS};
use crate::tensor::init::Initializer;
use crate::tensor::{ops, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// Square input size; a power of two, at least 64 so the coarsest level
    /// (input/64) is nonempty.
    pub input_size: usize,
    pub stem_channels: usize,
    pub blocks_per_stage: usize,
    /// Channel count of every pyramid level.
    pub channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_size: 128,
            stem_channels: 16,
            blocks_per_stage: 2,
            channels: 32,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.input_size.is_power_of_two() || self.input_size < 64 {
            return Err(Error::InvalidConfig(format!(
                "backbone input size must be a power of two >= 64, got {}",
                self.input_size
            )));
        }
        if self.stem_channels == 0 || self.channels == 0 || self.blocks_per_stage == 0 {
            return Err(Error::InvalidConfig(
                "backbone channel and block counts must be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// (height, width) of each pyramid level, finest first.
    pub fn level_shapes(&self) -> Vec<(usize, usize)> {
        (0..PYRAMID_LEVELS)
            .map(|i| {
                let s = self.input_size >> (2 + i);
                (s, s)
            })
            .collect()
    }
}

/// Identity-shortcut residual block: y = relu(F(x) + shortcut(x)) where F is
/// conv3x3 -> relu -> conv3x3. The shortcut is a 1x1 projection whenever the
/// block changes stride or channel count.
pub struct ResidualBlock<T: Scalar> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    shortcut: Option<Conv2d<T>>,
}

impl<T: Scalar> ResidualBlock<T> {
    fn new(init: &mut Initializer, cin: usize, cout: usize, stride: usize) -> Self {
        let shortcut = if stride != 1 || cin != cout {
            Some(Conv2d::he(init, cin, cout, 1, stride, 0))
        } else {
            None
        };
        ResidualBlock {
            conv1: Conv2d::he(init, cin, cout, 3, stride, 1),
            conv2: Conv2d::he(init, cout, cout, 3, 1, 1),
            shortcut,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.conv2.forward(&ops::relu(&self.conv1.forward(x)?))?;
        let s = match &self.shortcut {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok(ops::relu(&ops::add(&f, &s)?))
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        self.conv2.collect_params(&format!("{prefix}.conv2"), out);
        if let Some(s) = &mut self.shortcut {
            s.collect_params(&format!("{prefix}.shortcut"), out);
        }
    }
}

pub struct Backbone<T: Scalar> {
    cfg: BackboneConfig,
    stem: Conv2d<T>,
    stages: Vec<Vec<ResidualBlock<T>>>,
}

impl<T: Scalar> Backbone<T> {
    /// Builds all parameters deterministically from the initializer stream.
    pub fn new(cfg: &BackboneConfig, init: &mut Initializer) -> Result<Self> {
        cfg.validate()?;
        let stem = Conv2d::he(init, 1, cfg.stem_channels, 7, 2, 3);
        let mut stages = Vec::with_capacity(PYRAMID_LEVELS);
        let mut cin = cfg.stem_channels;
        for _ in 0..PYRAMID_LEVELS {
            let mut blocks = Vec::with_capacity(cfg.blocks_per_stage);
            blocks.push(ResidualBlock::new(init, cin, cfg.channels, 2));
            for _ in 1..cfg.blocks_per_stage {
                blocks.push(ResidualBlock::new(init, cfg.channels, cfg.channels, 1));
            }
            stages.push(blocks);
            cin = cfg.channels;
        }
        Ok(Backbone {
            cfg: cfg.clone(),
            stem,
            stages,
        })
    }

    /// Convenience constructor owning its own seed stream.
    pub fn build(cfg: &BackboneConfig, seed: u64) -> Result<Self> {
        Self::new(cfg, &mut Initializer::new(seed))
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    /// Runs the stem and all stages, collecting each stage output as one
    /// pyramid level (finest first).
    pub fn extract_pyramid(&self, images: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        let s = images.shape();
        let size = self.cfg.input_size;
        if s.len() != 4 || s[1] != 1 || s[2] != size || s[3] != size {
            return Err(Error::shape(
                "extract_pyramid",
                format!("expected [N,1,{size},{size}] input, got {s:?}"),
            ));
        }
        let mut x = ops::relu(&self.stem.forward(images)?);
        let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(&x)?;
            }
            levels.push(x.clone());
        }
        FeaturePyramid::new(levels)
    }

    pub fn collect_params<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Tensor<T>)>,
    ) {
        self.stem.collect_params(&format!("{prefix}.stem"), out);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (bi, block) in stage.iter_mut().enumerate() {
                block.collect_params(&format!("{prefix}.stage{si}.block{bi}"), out);
            }
        }
    }
}
