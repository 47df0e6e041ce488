//! Seeded end-to-end training and evaluation drivers, plus the append-only
//! run record they emit.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::eval::{evaluate_single_class, Detection, EvalReport};
use crate::model::FpaeNet;
use crate::tensor::adam::Adam;
use crate::tensor::Scalar;

/// Everything one training or evaluation run produced. Losses are appended
/// per optimizer step; the config echo is the canonical text the run used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_echo: String,
    pub losses: Vec<f64>,
    pub wall_time_secs: f64,
    pub final_eval: Option<EvalReport>,
    pub checkpoint_path: Option<String>,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

/// Per-step progress callback: (step index, loss value).
pub type StepObserver<'a> = dyn FnMut(usize, f64) + 'a;

/// Runs `epochs x ceil(n/batch)` optimizer steps over a seeded per-epoch
/// shuffle of the samples. Aborts loudly on the first non-finite loss.
pub fn train<T: Scalar>(
    model: &mut FpaeNet<T>,
    adam: &mut Adam<T>,
    samples: &[Sample<T>],
    observer: Option<&mut StepObserver<'_>>,
) -> Result<RunRecord> {
    if samples.is_empty() {
        return Err(Error::Dataset("training set is empty".to_string()));
    }
    let cfg = model.config().clone();
    let start = Instant::now();
    let mut losses = Vec::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_6E64_6F6D_5F31);
    let mut observer = observer;

    let mut step = 0usize;
    for _epoch in 0..cfg.optim.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.optim.batch_size) {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &samples[i]).collect();
            let breakdown = model.loss_batch(&batch)?;
            let loss = breakdown.total.item().as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!(
                        "training loss (classification {}, regression {})",
                        breakdown.classification, breakdown.regression
                    ),
                    step: Some(step),
                });
            }
            breakdown.total.backward()?;
            let mut params = Vec::new();
            model.collect_params(&mut params);
            adam.step(&mut params)?;
            losses.push(loss);
            if let Some(obs) = observer.as_deref_mut() {
                obs(step, loss);
            }
            step += 1;
        }
    }

    Ok(RunRecord {
        config_echo: cfg.to_text(),
        losses,
        wall_time_secs: start.elapsed().as_secs_f64(),
        final_eval: None,
        checkpoint_path: None,
    })
}

/// Full inference and scoring over a sample set. The set must contain at
/// least one annotated box; an empty set is an error, not a zero score.
pub fn evaluate<T: Scalar>(model: &FpaeNet<T>, samples: &[Sample<T>]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".to_string()));
    }
    let cfg = model.config();
    let mut per_image: Vec<(Vec<Detection>, Vec<crate::boxes::BoxXYWH>)> = Vec::new();
    for (idx, sample) in samples.iter().enumerate() {
        let dets = model.predict(&sample.image, idx)?;
        let gts = sample.gts.iter().map(|g| g.rect).collect();
        per_image.push((dets, gts));
    }
    evaluate_single_class(
        &per_image,
        cfg.eval.iou_threshold,
        cfg.eval.interpolation,
    )
}

/// Builds the synthetic dataset a config describes.
pub fn synthesize_dataset<T: Scalar>(cfg: &ModelConfig) -> Result<Vec<Sample<T>>> {
    crate::data::generate_dataset(cfg.seed, cfg.data.count, &cfg.synth_config())
}
