//! The full gradient verification suite: every kernel in the op set, the
//! loss operations, and a sampled end-to-end check of the training loss
//! against finite differences through the whole network. Double precision
//! throughout, step 1e-4, tolerance 1e-3, with a fault-injected negative
//! control that must fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::{generate_sample, Sample, SynthConfig};
use crate::error::Result;
use crate::loss::{focal_loss, smooth_l1};
use crate::model::FpaeNet;
use crate::tensor::gradcheck::{grad_check, GradReport, SuiteEntry, SUITE_STEP, SUITE_TOLERANCE};
use crate::tensor::Tensor;

fn judge(name: &str, report: GradReport) -> SuiteEntry {
    let passed = report.max_rel_err <= SUITE_TOLERANCE;
    SuiteEntry {
        name: name.to_string(),
        report,
        tolerance: SUITE_TOLERANCE,
        expect_fail: false,
        passed,
    }
}

fn loss_entries(seed: u64, entries: &mut Vec<SuiteEntry>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_focal = GradReport {
        max_rel_err: 0.0,
        mean_rel_err: 0.0,
        coords: 0,
    };
    for _ in 0..10 {
        let n = 12;
        let labels: Vec<i8> = (0..n)
            .map(|_| [1i8, 0, 0, -1][rng.gen_range(0..4)])
            .collect();
        let point = Tensor::from_vec(
            (0..n).map(|_| rng.gen_range(-2.5..2.5)).collect(),
            &[n],
        )?;
        let labels_c = labels.clone();
        let r = grad_check(
            &move |x: &Tensor<f64>| focal_loss(x, &labels_c, 0.25, 2.0, 3.0),
            &point,
            SUITE_STEP,
        )?;
        if r.max_rel_err >= worst_focal.max_rel_err {
            worst_focal = r;
        }
    }
    entries.push(judge("focal_loss", worst_focal));

    let mut worst_smooth = GradReport {
        max_rel_err: 0.0,
        mean_rel_err: 0.0,
        coords: 0,
    };
    let beta = 1.0 / 9.0;
    for _ in 0..10 {
        let anchors = 4;
        let targets: Vec<(usize, [f64; 4])> = vec![
            (0, std::array::from_fn(|_| rng.gen_range(-1.0..1.0))),
            (2, std::array::from_fn(|_| rng.gen_range(-1.0..1.0))),
        ];
        // keep every residual away from the Huber knee so the finite
        // difference never straddles the kink
        let targets_c = targets.clone();
        let point = Tensor::from_vec(
            (0..anchors * 4)
                .map(|i| {
                    let base = rng.gen_range(0.3..1.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let centre = targets_c
                        .iter()
                        .find(|(a, _)| *a == i / 4)
                        .map(|(_, t)| t[i % 4])
                        .unwrap_or(0.0);
                    centre + base
                })
                .collect(),
            &[anchors * 4],
        )?;
        let r = grad_check(
            &move |x: &Tensor<f64>| smooth_l1(x, &targets, beta, 2.0),
            &point,
            SUITE_STEP,
        )?;
        if r.max_rel_err >= worst_smooth.max_rel_err {
            worst_smooth = r;
        }
    }
    entries.push(judge("smooth_l1", worst_smooth));
    Ok(())
}

fn verification_model(seed: u64) -> Result<(FpaeNet<f64>, Sample<f64>)> {
    let mut cfg = ModelConfig::default();
    cfg.seed = seed;
    cfg.backbone.input_size = 64;
    cfg.backbone.stem_channels = 4;
    cfg.backbone.blocks_per_stage = 1;
    cfg.backbone.channels = 8;
    cfg.neck.channels = 8;
    cfg.heads.subnet_depth = 1;
    let model = FpaeNet::<f64>::new(&cfg)?;
    let sample = generate_sample::<f64>(
        seed,
        &SynthConfig {
            image_size: 64,
            lesion_count: (1, 1),
            contrast: (0.4, 0.6),
        },
    )?;
    Ok((model, sample))
}

fn eval_loss(model: &FpaeNet<f64>, sample: &Sample<f64>) -> Result<f64> {
    Ok(model.loss_batch(&[sample])?.total.item())
}

/// Finite-difference check of the end-to-end training loss with respect to
/// a random sample of `coords` parameter coordinates drawn across all
/// submodules.
pub fn end_to_end_param_check(seed: u64, coords: usize) -> Result<GradReport> {
    let (mut model, sample) = verification_model(seed)?;

    let breakdown = model.loss_batch(&[&sample])?;
    breakdown.total.backward()?;
    let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
    {
        let mut slots = Vec::new();
        model.collect_params(&mut slots);
        for (name, t) in &slots {
            grads.push((name.clone(), t.grad().unwrap_or_else(|| vec![0.0; t.len()])));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_CAFE);
    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0f64;
    let mut checked = 0usize;
    let mut attempts = 0usize;
    while checked < coords {
        attempts += 1;
        if attempts > coords * 20 {
            return Err(crate::error::Error::GradCheck(
                "could not find enough kink-free parameter coordinates".to_string(),
            ));
        }
        let (pi, ci, analytic) = {
            let pi = rng.gen_range(0..grads.len());
            let ci = rng.gen_range(0..grads[pi].1.len());
            (pi, ci, grads[pi].1[ci])
        };
        let mut offset = 0.0f64;
        let mut measure = |at: f64| -> Result<f64> {
            {
                let mut slots = Vec::new();
                model.collect_params(&mut slots);
                let (_, t) = &mut slots[pi];
                let mut data = t.data().to_vec();
                data[ci] += at - offset;
                let shape = t.shape().to_vec();
                **t = Tensor::param(data, &shape)?;
            }
            offset = at;
            eval_loss(&model, &sample)
        };
        let fp = measure(SUITE_STEP)?;
        let fm = measure(-SUITE_STEP)?;
        let fph = measure(SUITE_STEP / 2.0)?;
        let fmh = measure(-SUITE_STEP / 2.0)?;
        measure(0.0)?; // restore
        let numeric = (fp - fm) / (2.0 * SUITE_STEP);
        let numeric_half = (fph - fmh) / SUITE_STEP;
        // the loss is piecewise smooth in any one parameter; a half-step
        // estimate that disagrees means the perturbation straddles a relu
        // kink, where the difference quotient is not an oracle (the same
        // reason the relu op is checked away from 0)
        let smoothness = (numeric - numeric_half).abs()
            / numeric.abs().max(numeric_half.abs()).max(1e-8);
        if smoothness > 1e-4 {
            continue;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
        sum_rel += rel;
        checked += 1;
    }
    Ok(GradReport {
        max_rel_err: max_rel,
        mean_rel_err: sum_rel / coords as f64,
        coords,
    })
}

/// The complete table: op suite, loss ops, and the end-to-end sample.
pub fn run_full_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut entries = crate::tensor::gradcheck::run_suite(seed)?;
    loss_entries(seed.wrapping_add(1), &mut entries)?;
    let e2e = end_to_end_param_check(seed.wrapping_add(2), 20)?;
    entries.push(judge("end_to_end/total_loss", e2e));
    Ok(entries)
}
