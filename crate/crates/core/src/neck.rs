//! The pyramid neck: a first top-down pathway over per-level 1x1 laterals,
//! multi-kernel feature enhancement with softmax attention on the horizontal
//! connections, and a second top-down pathway feeding the heads.
//!
//! Each top-down sweep follows the same recursion: the coarsest output is
//! the lateral projection of the coarsest input, and every finer output adds
//! the upsampled previous output onto the lateral projection of its level.

use crate::error::{Error, Result};
use crate::layers::Conv2d;
use crate::pyramid::{FeaturePyramid, PYRAMID_LEVELS};
use crate::tensor::init::Initializer;
use crate::tensor::{ops, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct NeckConfig {
    pub channels: usize,
    /// Kernel sizes of the parallel enhancement branches; all odd.
    pub kernel_sizes: Vec<usize>,
    /// Adds the second top-down channel (the first toggle column).
    pub second_channel: bool,
    /// Multi-kernel enhancement on the second channel's laterals.
    pub enhancement: bool,
    /// Softmax-weighted branch fusion instead of uniform averaging.
    pub attention: bool,
}

impl Default for NeckConfig {
    fn default() -> Self {
        NeckConfig {
            channels: 32,
            kernel_sizes: vec![1, 3, 5],
            second_channel: true,
            enhancement: true,
            attention: true,
        }
    }
}

impl NeckConfig {
    /// The toggles compose as a ladder: attention needs enhancement, which
    /// needs the second channel. Everything off is the plain one-channel
    /// pyramid baseline.
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidConfig("neck channels must be positive".to_string()));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.iter().any(|&k| k % 2 == 0) {
            return Err(Error::InvalidConfig(format!(
                "enhancement kernel sizes must be odd and nonempty, got {:?}",
                self.kernel_sizes
            )));
        }
        if self.enhancement && !self.second_channel {
            return Err(Error::InvalidConfig(
                "enhancement requires the second top-down channel".to_string(),
            ));
        }
        if self.attention && !self.enhancement {
            return Err(Error::InvalidConfig(
                "attention requires enhancement".to_string(),
            ));
        }
        Ok(())
    }
}

/// Learnable projection shared by all branches: pooled branch descriptors
/// are mapped to one logit each, and softmax over the logits yields the
/// branch weights.
pub struct AttentionParams<T: Scalar> {
    pub projection: Tensor<T>,
    pub bias: Tensor<T>,
}

pub struct Neck<T: Scalar> {
    cfg: NeckConfig,
    /// First-channel laterals, one 1x1 projection per level.
    phi: Vec<Conv2d<T>>,
    /// Second-channel laterals.
    psi: Option<Vec<Conv2d<T>>>,
    /// Enhancement branches, shared across levels.
    branches: Option<Vec<Conv2d<T>>>,
    attention: Option<AttentionParams<T>>,
}

impl<T: Scalar> Neck<T> {
    /// Builds parameters for exactly the submodules the config enables, so
    /// toggled-off rows carry fewer parameters.
    pub fn new(cfg: &NeckConfig, init: &mut Initializer) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let phi = (0..PYRAMID_LEVELS)
            .map(|_| Conv2d::he(init, c, c, 1, 1, 0))
            .collect();
        let psi = cfg.second_channel.then(|| {
            (0..PYRAMID_LEVELS)
                .map(|_| Conv2d::he(init, c, c, 1, 1, 0))
                .collect()
        });
        let branches = cfg.enhancement.then(|| {
            cfg.kernel_sizes
                .iter()
                .map(|&k| Conv2d::he(init, c, c, k, 1, k / 2))
                .collect()
        });
        let attention = cfg.attention.then(|| AttentionParams {
            projection: init.normal_vec_param(c, (1.0 / c as f64).sqrt()),
            bias: init.zeros_param(&[1]),
        });
        Ok(Neck {
            cfg: cfg.clone(),
            phi,
            psi,
            branches,
            attention,
        })
    }

    pub fn config(&self) -> &NeckConfig {
        &self.cfg
    }

    /// Softmax attention weights for one level's branch maps.
    fn attention_weights(&self, branch_maps: &[Tensor<T>]) -> Result<Tensor<T>> {
        let params = self
            .attention
            .as_ref()
            .expect("attention weights requested without attention parameters");
        let mut logits = Vec::with_capacity(branch_maps.len());
        for e in branch_maps {
            let descriptor = ops::mean_rows(&ops::global_avg_pool(e)?)?;
            logits.push(ops::dot_bias(&descriptor, &params.projection, &params.bias)?);
        }
        ops::softmax1d(&ops::concat_flat(&logits)?)
    }

    /// Multi-kernel enhancement of one level: every branch convolves the
    /// input with its own kernel size, the branch maps are fused by a
    /// weighted sum, and the fusion is added back onto the input. With
    /// attention off the weights are fixed at 1/B.
    ///
    /// Returns the enhanced map together with the branch weights used.
    pub fn enhance(&self, h: &Tensor<T>, attention_on: bool) -> Result<(Tensor<T>, Tensor<T>)> {
        let branches = self.branches.as_ref().ok_or_else(|| {
            Error::InvalidConfig("enhancement requested on a neck built without branches".to_string())
        })?;
        if h.shape()[1] != self.cfg.channels {
            return Err(Error::shape(
                "enhance",
                format!("{} channels expected, got {:?}", self.cfg.channels, h.shape()),
            ));
        }
        let maps: Vec<Tensor<T>> = branches
            .iter()
            .map(|conv| conv.forward(h))
            .collect::<Result<_>>()?;
        let weights = if attention_on {
            if self.attention.is_none() {
                return Err(Error::InvalidConfig(
                    "attention requested on a neck built without attention parameters".to_string(),
                ));
            }
            self.attention_weights(&maps)?
        } else {
            Tensor::filled(&[maps.len()], T::from_f64(1.0 / maps.len() as f64))
        };
        let out = ops::residual_weighted_sum(h, &maps, &weights)?;
        Ok((out, weights))
    }

    /// One coarse-to-fine sweep: lateral projection per level plus the
    /// upsampled previous output; the coarsest level has no upsample term.
    pub fn top_down_pass(
        inputs: &FeaturePyramid<T>,
        laterals: &[Conv2d<T>],
    ) -> Result<FeaturePyramid<T>> {
        if laterals.len() < inputs.level_count() {
            return Err(Error::shape(
                "top_down_pass",
                format!(
                    "{} laterals for {} levels",
                    laterals.len(),
                    inputs.level_count()
                ),
            ));
        }
        let levels = inputs.levels();
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(levels.len());
        for (i, level) in levels.iter().enumerate().rev() {
            let lateral = laterals[i].forward(level)?;
            let out = match outputs.last() {
                Some(coarser) => ops::add(&lateral, &ops::upsample_nearest2x(coarser)?)?,
                None => lateral,
            };
            outputs.push(out);
        }
        outputs.reverse();
        FeaturePyramid::new(outputs)
    }

    pub fn forward(&self, x: &FeaturePyramid<T>) -> Result<FeaturePyramid<T>> {
        self.forward_with(x, &self.cfg)
    }

    /// Forward under an explicit toggle configuration. The toggles select
    /// code paths at call time; they may only enable submodules this neck
    /// was built with.
    pub fn forward_with(&self, x: &FeaturePyramid<T>, cfg: &NeckConfig) -> Result<FeaturePyramid<T>> {
        cfg.validate()?;
        let h1 = Self::top_down_pass(x, &self.phi)?;
        if !cfg.second_channel {
            return Ok(h1);
        }
        let psi = self.psi.as_ref().ok_or_else(|| {
            Error::InvalidConfig("second channel requested on a neck built without it".to_string())
        })?;
        let laterals: Vec<Tensor<T>> = if cfg.enhancement {
            h1.levels()
                .iter()
                .map(|h| self.enhance(h, cfg.attention).map(|(out, _)| out))
                .collect::<Result<_>>()?
        } else {
            h1.levels().to_vec()
        };
        Self::top_down_pass(&FeaturePyramid::new(laterals)?, psi)
    }

    pub fn collect_params<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Tensor<T>)>,
    ) {
        for (i, conv) in self.phi.iter_mut().enumerate() {
            conv.collect_params(&format!("{prefix}.phi{i}"), out);
        }
        if let Some(psi) = &mut self.psi {
            for (i, conv) in psi.iter_mut().enumerate() {
                conv.collect_params(&format!("{prefix}.psi{i}"), out);
            }
        }
        if let Some(branches) = &mut self.branches {
            for (i, conv) in branches.iter_mut().enumerate() {
                conv.collect_params(&format!("{prefix}.branch{i}"), out);
            }
        }
        if let Some(att) = &mut self.attention {
            out.push((format!("{prefix}.attention.projection"), &mut att.projection));
            out.push((format!("{prefix}.attention.bias"), &mut att.bias));
        }
    }

    /// The enhancement branch convolutions, when built.
    pub fn branch_convs(&self) -> Option<&[Conv2d<T>]> {
        self.branches.as_deref()
    }

    /// Test hook: overwrite every enhancement-branch weight and bias.
    pub fn scramble_branches(&mut self, fill: T) {
        if let Some(branches) = &mut self.branches {
            for conv in branches {
                conv.weight =
                    Tensor::param(vec![fill; conv.weight.len()], conv.weight.shape()).unwrap();
                conv.bias = Tensor::param(vec![fill; conv.bias.len()], conv.bias.shape()).unwrap();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_lateral(c: usize) -> Conv2d<f64> {
        let mut w = vec![0.0; c * c];
        for i in 0..c {
            w[i * c + i] = 1.0;
        }
        Conv2d {
            weight: Tensor::from_vec(w, &[c, c, 1, 1]).unwrap(),
            bias: Tensor::zeros(&[c]),
            stride: 1,
            padding: 0,
        }
    }

    fn pyramid(levels: Vec<Tensor<f64>>) -> FeaturePyramid<f64> {
        FeaturePyramid::new(levels).unwrap()
    }

    #[test]
    fn lateral_projects_to_configured_channels() {
        let mut init = Initializer::new(0);
        let conv = Conv2d::<f64>::he(&mut init, 7, 4, 1, 1, 0);
        let x = Tensor::zeros(&[1, 7, 6, 6]);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 4, 6, 6]);
    }

    #[test]
    fn identity_lateral_returns_input() {
        let conv = identity_lateral(3);
        let x = Tensor::from_vec((0..27).map(|v| v as f64 * 0.5).collect(), &[1, 3, 3, 3]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn top_down_zero_in_zero_out() {
        let mut init = Initializer::new(1);
        let laterals: Vec<Conv2d<f64>> = (0..2).map(|_| Conv2d::he(&mut init, 2, 2, 1, 1, 0)).collect();
        let p = pyramid(vec![Tensor::zeros(&[1, 2, 4, 4]), Tensor::zeros(&[1, 2, 2, 2])]);
        let out = Neck::top_down_pass(&p, &laterals).unwrap();
        for level in out.levels() {
            assert!(level.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn top_down_single_level_is_pure_lateral() {
        let lateral = identity_lateral(1);
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let p = pyramid(vec![x.clone()]);
        let out = Neck::top_down_pass(&p, std::slice::from_ref(&lateral)).unwrap();
        assert_eq!(out.levels()[0].data(), x.data());
    }

    #[test]
    fn top_down_two_level_closed_form() {
        // coarse 1x1 holding a, fine 2x2 holding b, identity laterals:
        // the fine output is b + a in every cell, exactly.
        let (a, b) = (3.25, -1.5);
        let coarse = Tensor::from_vec(vec![a], &[1, 1, 1, 1]).unwrap();
        let fine = Tensor::from_vec(vec![b; 4], &[1, 1, 2, 2]).unwrap();
        let laterals = [identity_lateral(1), identity_lateral(1)];
        let out = Neck::top_down_pass(&pyramid(vec![fine, coarse]), &laterals).unwrap();
        assert_eq!(out.levels()[1].data(), &[a]);
        assert_eq!(out.levels()[0].data(), &[b + a; 4]);
    }

    #[test]
    fn enhance_with_zero_branches_is_identity() {
        let cfg = NeckConfig {
            channels: 4,
            ..NeckConfig::default()
        };
        let mut init = Initializer::new(2);
        let mut neck = Neck::<f64>::new(&cfg, &mut init).unwrap();
        neck.scramble_branches(0.0);
        let h = Tensor::from_vec((0..4 * 9).map(|v| v as f64 * 0.1).collect(), &[1, 4, 3, 3]).unwrap();
        let (out, _) = neck.enhance(&h, false).unwrap();
        assert_eq!(out.data(), h.data());
    }

    #[test]
    fn enhance_uniform_weights_when_attention_off() {
        let cfg = NeckConfig {
            channels: 3,
            ..NeckConfig::default()
        };
        let mut init = Initializer::new(3);
        let neck = Neck::<f64>::new(&cfg, &mut init).unwrap();
        let h = Tensor::from_vec((0..3 * 16).map(|v| (v as f64).sin()).collect(), &[1, 3, 4, 4]).unwrap();
        let (out, w) = neck.enhance(&h, false).unwrap();
        assert_eq!(w.data(), &[1.0 / 3.0; 3]);

        // equals h + (e1+e2+e3)/3 recomputed by hand
        let branches = neck.branches.as_ref().unwrap();
        let maps: Vec<Tensor<f64>> = branches.iter().map(|c| c.forward(&h).unwrap()).collect();
        for (i, &v) in out.data().iter().enumerate() {
            let manual = h.data()[i]
                + (maps[0].data()[i] + maps[1].data()[i] + maps[2].data()[i]) / 3.0;
            assert!((v - manual).abs() < 1e-6);
        }
    }

    #[test]
    fn saturated_logits_select_single_branch() {
        // weights from logits [10, -10, -10] concentrate on branch 0 up to
        // exp(-20) leakage, so the output sits within 1e-3 of h + e_0.
        let cfg = NeckConfig {
            channels: 2,
            ..NeckConfig::default()
        };
        let mut init = Initializer::new(4);
        let neck = Neck::<f64>::new(&cfg, &mut init).unwrap();
        let h = Tensor::from_vec((0..2 * 4).map(|v| v as f64 * 0.25).collect(), &[1, 2, 2, 2]).unwrap();
        let branches = neck.branches.as_ref().unwrap();
        let maps: Vec<Tensor<f64>> = branches.iter().map(|c| c.forward(&h).unwrap()).collect();
        let w = ops::softmax1d(&Tensor::from_vec(vec![10.0, -10.0, -10.0], &[3]).unwrap()).unwrap();
        let out = ops::residual_weighted_sum(&h, &maps, &w).unwrap();
        for (i, &v) in out.data().iter().enumerate() {
            let dominant = h.data()[i] + maps[0].data()[i];
            assert!((v - dominant).abs() < 1e-3);
        }
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let cfg = NeckConfig {
            channels: 8,
            ..NeckConfig::default()
        };
        let mut init = Initializer::new(5);
        let neck = Neck::<f64>::new(&cfg, &mut init).unwrap();
        let h = Tensor::from_vec(
            (0..8 * 16).map(|v| ((v * 37 % 101) as f64) / 50.0 - 1.0).collect(),
            &[1, 8, 4, 4],
        )
        .unwrap();
        let (_, w) = neck.enhance(&h, true).unwrap();
        let total: f64 = w.data().iter().sum();
        assert!((total - 1.0).abs() <= 1e-6);
        assert!(w.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn toggle_ladder_validation() {
        let mut cfg = NeckConfig::default();
        cfg.validate().unwrap();
        cfg.attention = false;
        cfg.validate().unwrap();
        cfg.enhancement = false;
        cfg.validate().unwrap();
        cfg.second_channel = false;
        cfg.validate().unwrap();

        let bad = NeckConfig {
            second_channel: true,
            enhancement: false,
            attention: true,
            ..NeckConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = NeckConfig {
            second_channel: false,
            enhancement: true,
            attention: false,
            ..NeckConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn shape_preservation_across_configs() {
        let mut base = NeckConfig {
            channels: 6,
            ..NeckConfig::default()
        };
        let mut init = Initializer::new(6);
        let neck = Neck::<f32>::new(&base, &mut init).unwrap();
        let levels: Vec<Tensor<f32>> = [16usize, 8, 4, 2, 1]
            .iter()
            .map(|&s| Tensor::filled(&[2, 6, s, s], 0.1))
            .collect();
        let p = FeaturePyramid::new(levels).unwrap();
        let shapes = p.spatial_shapes();
        for (sc, en, at) in [(true, true, true), (true, true, false), (true, false, false), (false, false, false)] {
            base.second_channel = sc;
            base.enhancement = en;
            base.attention = at;
            let out = neck.forward_with(&p, &base).unwrap();
            assert_eq!(out.spatial_shapes(), shapes);
            assert_eq!(out.channels(), 6);
        }
    }

    #[test]
    fn enhancement_off_ignores_branch_parameters() {
        let cfg = NeckConfig {
            channels: 4,
            ..NeckConfig::default()
        };
        let mut init = Initializer::new(7);
        let mut neck = Neck::<f32>::new(&cfg, &mut init).unwrap();
        let off = NeckConfig {
            enhancement: false,
            attention: false,
            ..cfg.clone()
        };
        let levels: Vec<Tensor<f32>> = [8usize, 4, 2, 1]
            .iter()
            .map(|&s| Tensor::filled(&[1, 4, 2 * s, 2 * s], 0.5))
            .collect();
        // 4-level pyramid is enough laterals-wise (5 built, extra unused)
        let p = FeaturePyramid::new(levels).unwrap();
        let before = neck.forward_with(&p, &off).unwrap();
        neck.scramble_branches(123.0);
        let after = neck.forward_with(&p, &off).unwrap();
        for (a, b) in before.levels().iter().zip(after.levels()) {
            assert_eq!(a.data(), b.data(), "branch params must never be evaluated");
        }
    }

    #[test]
    fn gradient_reaches_every_active_submodule() {
        let cfg = NeckConfig {
            channels: 4,
            ..NeckConfig::default()
        };
        let mut init = Initializer::new(8);
        let mut neck = Neck::<f64>::new(&cfg, &mut init).unwrap();
        let levels: Vec<Tensor<f64>> = [8usize, 4, 2, 1]
            .iter()
            .map(|&s| {
                Tensor::from_vec(
                    (0..4 * 4 * s * s).map(|v| ((v * 13 % 23) as f64) / 10.0 - 1.0).collect(),
                    &[1, 4, 2 * s, 2 * s],
                )
                .unwrap()
            })
            .collect();
        let p = FeaturePyramid::new(levels).unwrap();
        let out = neck.forward(&p).unwrap();
        let mut total = None;
        for level in out.levels() {
            let s = ops::sum_all(level);
            total = Some(match total {
                None => s,
                Some(t) => ops::add(&t, &s).unwrap(),
            });
        }
        total.unwrap().backward().unwrap();
        let mut params = Vec::new();
        neck.collect_params("neck", &mut params);
        for (name, t) in &params {
            // laterals for the unused 5th level never run; all others must
            // receive some gradient signal
            if name.contains("phi4") || name.contains("psi4") {
                continue;
            }
            let grad = t.grad();
            assert!(grad.is_some(), "{name} received no gradient");
            assert!(
                grad.unwrap().iter().any(|&g| g != 0.0),
                "{name} gradient is identically zero"
            );
        }
    }
}
