//! Scratch driver for tuning the overfit preset: trains the full model on
//! the easy synthetic set and reports loss trajectory, wall time, and mAP.

use fpaenet_core::config::ModelConfig;
use fpaenet_core::data::split_ids;
use fpaenet_core::model::FpaeNet;
use fpaenet_core::tensor::adam::Adam;
use fpaenet_core::trainer::{evaluate, synthesize_dataset, train};

fn main() {
    let mut cfg = ModelConfig::overfit_preset();
    let args: Vec<String> = std::env::args().collect();
    if args.len() > 1 {
        cfg.optim.epochs = args[1].parse().unwrap();
    }
    let start = std::time::Instant::now();
    let all = synthesize_dataset::<f32>(&cfg).unwrap();
    let ids: Vec<String> = all.iter().map(|s| s.id.clone()).collect();
    let (train_ids, _) = split_ids(&ids, cfg.data.test_fraction, cfg.seed).unwrap();
    let train_set: Vec<_> = all
        .into_iter()
        .filter(|s| train_ids.contains(&s.id))
        .collect();
    println!("training on {} samples", train_set.len());

    let mut model = FpaeNet::<f32>::new(&cfg).unwrap();
    let mut adam = Adam::new(cfg.optim.adam);
    let mut obs = |step: usize, loss: f64| {
        if step % 100 == 0 {
            println!("step {step:5}  loss {loss:.5}  ({:.1}s)", start.elapsed().as_secs_f64());
        }
    };
    let record = train(&mut model, &mut adam, &train_set, Some(&mut obs)).unwrap();
    println!(
        "steps {}  first loss {:.5}  last loss {:.5}  train time {:.1}s",
        record.losses.len(),
        record.losses[0],
        record.losses.last().unwrap(),
        record.wall_time_secs
    );
    let report = evaluate(&model, &train_set).unwrap();
    println!(
        "train-set mAP@{} = {:.4}  (tp {} fp {})  total {:.1}s",
        report.iou_threshold,
        report.map,
        report.tp,
        report.fp,
        start.elapsed().as_secs_f64()
    );
}
