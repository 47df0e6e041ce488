//! Model configuration: one flat key=value file with dotted keys.
//!
//! The flat format diffs cleanly across ablation sweeps. Parsing rejects
//! unknown keys, every field is validated, and `to_text` emits a canonical
//! echo that round-trips and is embedded verbatim in checkpoints and run
//! records.

use std::path::Path;

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::eval::Interpolation;
use crate::heads::HeadConfig;
use crate::neck::NeckConfig;
use crate::tensor::adam::AdamConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            adam: AdamConfig::default(),
            batch_size: 2,
            epochs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            score_threshold: 0.05,
            nms_iou: 0.5,
            interpolation: Interpolation::AllPoints,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Synthetic,
    Rsna,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: SourceKind,
    /// Synthetic sample count.
    pub count: usize,
    pub test_fraction: f64,
    pub lesions_min: usize,
    pub lesions_max: usize,
    pub contrast_min: f64,
    pub contrast_max: f64,
    /// Real-data location.
    pub dir: String,
    pub annotations: String,
    pub extension: String,
    pub strict: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: SourceKind::Synthetic,
            count: 120,
            test_fraction: 1019.0 / 6012.0,
            lesions_min: 1,
            lesions_max: 2,
            contrast_min: 0.1,
            contrast_max: 0.3,
            dir: String::new(),
            annotations: String::new(),
            extension: "png".to_string(),
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub seed: u64,
    pub backbone: BackboneConfig,
    pub neck: NeckConfig,
    pub heads: HeadConfig,
    pub smooth_l1_beta: f64,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let backbone = BackboneConfig::default();
        let neck = NeckConfig {
            channels: backbone.channels,
            ..NeckConfig::default()
        };
        ModelConfig {
            seed: 0,
            backbone,
            neck,
            heads: HeadConfig::default(),
            smooth_l1_beta: 1.0 / 9.0,
            optim: OptimConfig::default(),
            eval: EvalConfig::default(),
            data: DataConfig::default(),
        }
    }
}

fn parse_num_list(value: &str, key: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("{key}: bad number `{p}`")))
        })
        .collect()
}

fn parse_usize_list(value: &str, key: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("{key}: bad integer `{p}`")))
        })
        .collect()
}

fn parse_one<V: std::str::FromStr>(value: &str, key: &str) -> Result<V> {
    value
        .trim()
        .parse::<V>()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        other => Err(Error::InvalidConfig(format!("{key}: bad boolean `{other}`"))),
    }
}

impl ModelConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value, got `{line}`", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_one(value, key)?,
            "backbone.input_size" => self.backbone.input_size = parse_one(value, key)?,
            "backbone.stem_channels" => self.backbone.stem_channels = parse_one(value, key)?,
            "backbone.blocks_per_stage" => self.backbone.blocks_per_stage = parse_one(value, key)?,
            "backbone.channels" => {
                self.backbone.channels = parse_one(value, key)?;
                self.neck.channels = self.backbone.channels;
            }
            "neck.kernels" => self.neck.kernel_sizes = parse_usize_list(value, key)?,
            "neck.new_channels" => self.neck.second_channel = parse_bool(value, key)?,
            "neck.enhancement" => self.neck.enhancement = parse_bool(value, key)?,
            "neck.attention" => self.neck.attention = parse_bool(value, key)?,
            "heads.scales" => self.heads.anchor.scales = parse_num_list(value, key)?,
            "heads.ratios" => self.heads.anchor.ratios = parse_num_list(value, key)?,
            "heads.subnet_depth" => self.heads.subnet_depth = parse_one(value, key)?,
            "heads.num_classes" => self.heads.num_classes = parse_one(value, key)?,
            "heads.prior" => self.heads.prior = parse_one(value, key)?,
            "heads.alpha" => self.heads.alpha = parse_one(value, key)?,
            "heads.gamma" => self.heads.gamma = parse_one(value, key)?,
            "heads.pos_iou" => self.heads.pos_iou = parse_one(value, key)?,
            "heads.neg_iou" => self.heads.neg_iou = parse_one(value, key)?,
            "heads.smooth_l1_beta" => self.smooth_l1_beta = parse_one(value, key)?,
            "optim.lr" => self.optim.adam.lr = parse_one(value, key)?,
            "optim.beta1" => self.optim.adam.beta1 = parse_one(value, key)?,
            "optim.beta2" => self.optim.adam.beta2 = parse_one(value, key)?,
            "optim.eps" => self.optim.adam.eps = parse_one(value, key)?,
            "optim.batch_size" => self.optim.batch_size = parse_one(value, key)?,
            "optim.epochs" => self.optim.epochs = parse_one(value, key)?,
            "eval.iou_threshold" => self.eval.iou_threshold = parse_one(value, key)?,
            "eval.score_threshold" => self.eval.score_threshold = parse_one(value, key)?,
            "eval.nms_iou" => self.eval.nms_iou = parse_one(value, key)?,
            "eval.interpolation" => {
                self.eval.interpolation = match value {
                    "all_points" => Interpolation::AllPoints,
                    "eleven_point" => Interpolation::ElevenPoint,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "eval.interpolation: `{other}` (use all_points or eleven_point)"
                        )))
                    }
                }
            }
            "data.source" => {
                self.data.source = match value {
                    "synthetic" => SourceKind::Synthetic,
                    "rsna" => SourceKind::Rsna,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "data.source: `{other}` (use synthetic or rsna)"
                        )))
                    }
                }
            }
            "data.count" => self.data.count = parse_one(value, key)?,
            "data.test_fraction" => self.data.test_fraction = parse_one(value, key)?,
            "data.lesions_min" => self.data.lesions_min = parse_one(value, key)?,
            "data.lesions_max" => self.data.lesions_max = parse_one(value, key)?,
            "data.contrast_min" => self.data.contrast_min = parse_one(value, key)?,
            "data.contrast_max" => self.data.contrast_max = parse_one(value, key)?,
            "data.dir" => self.data.dir = value.to_string(),
            "data.annotations" => self.data.annotations = value.to_string(),
            "data.extension" => self.data.extension = value.to_string(),
            "data.strict" => self.data.strict = parse_bool(value, key)?,
            unknown => {
                return Err(Error::InvalidConfig(format!("unknown key `{unknown}`")))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.neck.validate()?;
        self.heads.validate()?;
        if self.neck.channels != self.backbone.channels {
            return Err(Error::InvalidConfig(format!(
                "neck channels {} must match backbone channels {}",
                self.neck.channels, self.backbone.channels
            )));
        }
        if self.optim.batch_size == 0 || self.optim.epochs == 0 {
            return Err(Error::InvalidConfig(
                "batch size and epochs must be positive".to_string(),
            ));
        }
        if self.optim.adam.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.optim.adam.lr
            )));
        }
        for (name, v) in [
            ("eval.iou_threshold", self.eval.iou_threshold),
            ("eval.nms_iou", self.eval.nms_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.eval.score_threshold) {
            return Err(Error::InvalidConfig(format!(
                "eval.score_threshold must lie in [0,1), got {}",
                self.eval.score_threshold
            )));
        }
        if !(0.0 < self.data.test_fraction && self.data.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "data.test_fraction must lie in (0,1), got {}",
                self.data.test_fraction
            )));
        }
        if self.data.lesions_min > self.data.lesions_max
            || self.data.contrast_min > self.data.contrast_max
        {
            return Err(Error::InvalidConfig(
                "synthetic lesion/contrast ranges are inverted".to_string(),
            ));
        }
        if self.smooth_l1_beta <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "heads.smooth_l1_beta must be positive, got {}",
                self.smooth_l1_beta
            )));
        }
        Ok(())
    }

    /// Canonical echo: every key in fixed order. Parsing this text yields
    /// an equal config.
    pub fn to_text(&self) -> String {
        let interp = match self.eval.interpolation {
            Interpolation::AllPoints => "all_points",
            Interpolation::ElevenPoint => "eleven_point",
        };
        let source = match self.data.source {
            SourceKind::Synthetic => "synthetic",
            SourceKind::Rsna => "rsna",
        };
        let fmt_list = |v: &[f64]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let kernels = self
            .neck
            .kernel_sizes
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "seed={}\n\
             backbone.input_size={}\n\
             backbone.stem_channels={}\n\
             backbone.blocks_per_stage={}\n\
             backbone.channels={}\n\
             neck.kernels={}\n\
             neck.new_channels={}\n\
             neck.enhancement={}\n\
             neck.attention={}\n\
             heads.scales={}\n\
             heads.ratios={}\n\
             heads.subnet_depth={}\n\
             heads.num_classes={}\n\
             heads.prior={}\n\
             heads.alpha={}\n\
             heads.gamma={}\n\
             heads.pos_iou={}\n\
             heads.neg_iou={}\n\
             heads.smooth_l1_beta={}\n\
             optim.lr={}\n\
             optim.beta1={}\n\
             optim.beta2={}\n\
             optim.eps={}\n\
             optim.batch_size={}\n\
             optim.epochs={}\n\
             eval.iou_threshold={}\n\
             eval.score_threshold={}\n\
             eval.nms_iou={}\n\
             eval.interpolation={}\n\
             data.source={}\n\
             data.count={}\n\
             data.test_fraction={}\n\
             data.lesions_min={}\n\
             data.lesions_max={}\n\
             data.contrast_min={}\n\
             data.contrast_max={}\n\
             data.dir={}\n\
             data.annotations={}\n\
             data.extension={}\n\
             data.strict={}\n",
            self.seed,
            self.backbone.input_size,
            self.backbone.stem_channels,
            self.backbone.blocks_per_stage,
            self.backbone.channels,
            kernels,
            self.neck.second_channel,
            self.neck.enhancement,
            self.neck.attention,
            fmt_list(&self.heads.anchor.scales),
            fmt_list(&self.heads.anchor.ratios),
            self.heads.subnet_depth,
            self.heads.num_classes,
            self.heads.prior,
            self.heads.alpha,
            self.heads.gamma,
            self.heads.pos_iou,
            self.heads.neg_iou,
            self.smooth_l1_beta,
            self.optim.adam.lr,
            self.optim.adam.beta1,
            self.optim.adam.beta2,
            self.optim.adam.eps,
            self.optim.batch_size,
            self.optim.epochs,
            self.eval.iou_threshold,
            self.eval.score_threshold,
            self.eval.nms_iou,
            interp,
            source,
            self.data.count,
            self.data.test_fraction,
            self.data.lesions_min,
            self.data.lesions_max,
            self.data.contrast_min,
            self.data.contrast_max,
            self.data.dir,
            self.data.annotations,
            self.data.extension,
            self.data.strict,
        )
    }

    /// Line-by-line diff of two canonical echoes; empty when identical.
    pub fn diff(&self, other: &ModelConfig) -> Vec<String> {
        self.to_text()
            .lines()
            .zip(other.to_text().lines())
            .filter(|(a, b)| a != b)
            .map(|(a, b)| format!("expected `{a}`, checkpoint has `{b}`"))
            .collect()
    }

    /// The three ablation rows: second channel only, plus enhancement,
    /// plus attention — all sharing this config's remaining fields.
    pub fn ablation_rows(&self) -> [ModelConfig; 3] {
        let mut rows = [self.clone(), self.clone(), self.clone()];
        for (row, (en, at)) in rows
            .iter_mut()
            .zip([(false, false), (true, false), (true, true)])
        {
            row.neck.second_channel = true;
            row.neck.enhancement = en;
            row.neck.attention = at;
        }
        rows
    }

    pub fn synth_config(&self) -> crate::data::SynthConfig {
        crate::data::SynthConfig {
            image_size: self.backbone.input_size,
            lesion_count: (self.data.lesions_min, self.data.lesions_max),
            contrast: (self.data.contrast_min, self.data.contrast_max),
        }
    }

    /// The easy-data overfit preset used by the training sanity check:
    /// a 64px full-toggle model overfit on 20 high-contrast synthetic
    /// images for 2000 steps at lr 1e-3 (24 generated, 20 after the split).
    pub fn overfit_preset() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.backbone.input_size = 64;
        cfg.data.count = 24;
        cfg.data.lesions_min = 1;
        cfg.data.lesions_max = 1;
        cfg.data.contrast_min = 0.55;
        cfg.data.contrast_max = 0.8;
        cfg.optim.adam.lr = 1e-3;
        cfg.optim.batch_size = 2;
        cfg.optim.epochs = 200; // 20 train images / batch 2 -> 2000 steps
        cfg
    }
}
