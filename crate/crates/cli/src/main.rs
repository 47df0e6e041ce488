//! Command-line driver for the detector: training, evaluation, single-image
//! detection, gradient verification, and the toggle ablation sweep.
//!
//! Exit codes: 0 success, 1 usage, 2 validation failure, 3 numeric failure.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use fpaenet_core::checkpoint;
use fpaenet_core::config::{ModelConfig, SourceKind};
use fpaenet_core::data::{load_dataset, split_ids, DataSource, DatasetManifest, LoadConfig, Sample};
use fpaenet_core::error::Error;
use fpaenet_core::eval::Detection;
use fpaenet_core::model::FpaeNet;
use fpaenet_core::tensor::adam::Adam;
use fpaenet_core::trainer::{evaluate, synthesize_dataset, train, RunRecord};
use fpaenet_core::verify::run_full_suite;

#[derive(Parser)]
#[command(
    name = "fpaenet",
    version,
    about = "Feature-pyramid attention-enhancement lesion detector"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, manifest, and run record
    Train {
        /// key=value config file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Image directory for real data (implies data.source=rsna)
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Abort on any malformed dataset entry instead of skipping
        #[arg(long)]
        strict: bool,
    },
    /// Evaluate a checkpoint and print the report
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Expected config; rejected with a field diff when it disagrees
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also write the report to this file
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strict: bool,
    },
    /// Run detection on one grayscale image
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image (8-bit grayscale raster)
        image: PathBuf,
        /// Write an overlay raster with the detected boxes burned in
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify every gradient rule against central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train and evaluate the three toggle rows under one seed
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } | Error::GradCheck(_) => 3,
        _ => 2,
    }
}

fn load_config(
    path: Option<&Path>,
    seed: Option<u64>,
    dataset: Option<&Path>,
    strict: bool,
) -> Result<ModelConfig, Error> {
    let mut cfg = match path {
        Some(p) => ModelConfig::from_file(p)?,
        None => ModelConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(dir) = dataset {
        cfg.data.source = SourceKind::Rsna;
        cfg.data.dir = dir.display().to_string();
        if cfg.data.annotations.is_empty() {
            cfg.data.annotations = dir.join("annotations.csv").display().to_string();
        }
    }
    if strict {
        cfg.data.strict = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_samples(cfg: &ModelConfig) -> Result<Vec<Sample<f32>>, Error> {
    match cfg.data.source {
        SourceKind::Synthetic => synthesize_dataset::<f32>(cfg),
        SourceKind::Rsna => {
            let load_cfg = LoadConfig {
                target_size: cfg.backbone.input_size,
                extension: cfg.data.extension.clone(),
                strict: cfg.data.strict,
            };
            let (samples, report) = load_dataset::<f32>(
                Path::new(&cfg.data.dir),
                Path::new(&cfg.data.annotations),
                &load_cfg,
            )?;
            if !report.skipped.is_empty() {
                eprintln!("skipped {} dataset entries:", report.skipped.len());
                for line in &report.skipped {
                    eprintln!("  {line}");
                }
            }
            Ok(samples)
        }
    }
}

fn split_samples(
    cfg: &ModelConfig,
    samples: Vec<Sample<f32>>,
) -> Result<(Vec<Sample<f32>>, Vec<Sample<f32>>, DatasetManifest), Error> {
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let (train_ids, test_ids) = split_ids(&ids, cfg.data.test_fraction, cfg.seed)?;
    let mut train_set = Vec::new();
    let mut test_set = Vec::new();
    for s in samples {
        if test_ids.contains(&s.id) {
            test_set.push(s);
        } else {
            train_set.push(s);
        }
    }
    let source = match cfg.data.source {
        SourceKind::Synthetic => DataSource::Synthetic {
            seed: cfg.seed,
            count: cfg.data.count,
        },
        SourceKind::Rsna => DataSource::Directory {
            dir: PathBuf::from(&cfg.data.dir),
            annotations: PathBuf::from(&cfg.data.annotations),
        },
    };
    let manifest = DatasetManifest {
        source,
        test_fraction: cfg.data.test_fraction,
        split_seed: cfg.seed,
        train_ids,
        test_ids,
    };
    Ok((train_set, test_set, manifest))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            dataset,
            strict,
        } => cmd_train(config.as_deref(), &out, seed, dataset.as_deref(), strict),
        Command::Eval {
            checkpoint,
            config,
            dataset,
            out,
            seed,
            strict,
        } => cmd_eval(
            &checkpoint,
            config.as_deref(),
            dataset.as_deref(),
            out.as_deref(),
            seed,
            strict,
        ),
        Command::Detect {
            checkpoint,
            image,
            out,
        } => cmd_detect(&checkpoint, &image, out.as_deref()),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::Ablate {
            config,
            out,
            seed,
            dataset,
            strict,
        } => cmd_ablate(config.as_deref(), &out, seed, dataset.as_deref(), strict),
    }
}

fn train_one(
    cfg: &ModelConfig,
    train_set: &[Sample<f32>],
    test_set: &[Sample<f32>],
    checkpoint_path: &Path,
    quiet: bool,
) -> Result<RunRecord, Error> {
    let mut model = FpaeNet::<f32>::new(cfg)?;
    let mut adam = Adam::new(cfg.optim.adam);
    let total_steps = cfg.optim.epochs * train_set.len().div_ceil(cfg.optim.batch_size);
    let log_every = (total_steps / 20).max(1);
    let mut observer = move |step: usize, loss: f64| {
        if !quiet && (step % log_every == 0 || step + 1 == total_steps) {
            println!("step {step:6}  loss {loss:.6}");
        }
    };
    let mut record = train(&mut model, &mut adam, train_set, Some(&mut observer))?;
    if !test_set.is_empty() && test_set.iter().any(|s| !s.gts.is_empty()) {
        record.final_eval = Some(evaluate(&model, test_set)?);
    }
    checkpoint::save(checkpoint_path, &mut model, &adam)?;
    record.checkpoint_path = Some(checkpoint_path.display().to_string());
    Ok(record)
}

fn cmd_train(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    dataset: Option<&Path>,
    strict: bool,
) -> Result<(), Error> {
    let cfg = load_config(config, seed, dataset, strict)?;
    std::fs::create_dir_all(out)?;
    let samples = load_samples(&cfg)?;
    let (train_set, test_set, manifest) = split_samples(&cfg, samples)?;
    println!(
        "training on {} samples, holding out {}",
        train_set.len(),
        test_set.len()
    );
    std::fs::write(out.join("manifest.json"), manifest.to_json())?;

    let record = train_one(&cfg, &train_set, &test_set, &out.join("checkpoint.fpae"), false)?;
    std::fs::write(out.join("run.json"), record.to_json())?;
    println!(
        "finished {} steps in {:.1}s; first loss {:.5}, last loss {:.5}",
        record.losses.len(),
        record.wall_time_secs,
        record.losses.first().copied().unwrap_or(f64::NAN),
        record.losses.last().copied().unwrap_or(f64::NAN),
    );
    if let Some(report) = &record.final_eval {
        println!("held-out mAP@{} = {:.4}", report.iou_threshold, report.map);
    }
    println!("checkpoint: {}", out.join("checkpoint.fpae").display());
    Ok(())
}

fn cmd_eval(
    ckpt: &Path,
    config: Option<&Path>,
    dataset: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
    strict: bool,
) -> Result<(), Error> {
    let expected = match config {
        Some(p) => Some(ModelConfig::from_file(p)?),
        None => None,
    };
    let (model, _adam) = checkpoint::restore::<f32>(ckpt, expected.as_ref())?;
    let mut cfg = model.config().clone();
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(dir) = dataset {
        cfg.data.source = SourceKind::Rsna;
        cfg.data.dir = dir.display().to_string();
        if cfg.data.annotations.is_empty() {
            cfg.data.annotations = dir.join("annotations.csv").display().to_string();
        }
    }
    if strict {
        cfg.data.strict = true;
    }

    // explicit datasets are scored whole; otherwise the config's held-out
    // split is regenerated and scored
    let samples = load_samples(&cfg)?;
    let subject = if dataset.is_some() {
        samples
    } else {
        let (_, test_set, _) = split_samples(&cfg, samples)?;
        test_set
    };
    let report = evaluate(&model, &subject)?;
    let json = report.to_json();
    println!("{json}");
    if let Some(path) = out {
        std::fs::write(path, &json)?;
    }
    Ok(())
}

fn cmd_detect(ckpt: &Path, image_path: &Path, out: Option<&Path>) -> Result<(), Error> {
    let (model, _) = checkpoint::restore::<f32>(ckpt, None)?;
    let size = model.config().backbone.input_size;
    let native = image::open(image_path)
        .map_err(|e| Error::Image(format!("{}: {e}", image_path.display())))?
        .into_luma8();
    let (nw, nh) = (native.width(), native.height());
    let resized = image::imageops::resize(
        &native,
        size as u32,
        size as u32,
        image::imageops::FilterType::Triangle,
    );
    let data: Vec<f32> = resized.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
    let tensor = fpaenet_core::tensor::Tensor::from_vec(data, &[1, 1, size, size])?;
    let mut dets = model.predict(&tensor, 0)?;

    // report in native pixel coordinates
    let (sx, sy) = (nw as f64 / size as f64, nh as f64 / size as f64);
    for d in &mut dets {
        d.bbox.x *= sx;
        d.bbox.w *= sx;
        d.bbox.y *= sy;
        d.bbox.h *= sy;
    }
    println!("{}", detections_json(&dets));

    if let Some(path) = out {
        let mut canvas = native;
        for d in &dets {
            burn_box(&mut canvas, d);
        }
        canvas
            .save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        println!("overlay written to {}", path.display());
    }
    Ok(())
}

fn detections_json(dets: &[Detection]) -> String {
    let rows: Vec<serde_json::Value> = dets
        .iter()
        .map(|d| {
            serde_json::json!({
                "x": d.bbox.x,
                "y": d.bbox.y,
                "width": d.bbox.w,
                "height": d.bbox.h,
                "score": d.score,
                "class_id": d.class_id,
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "detections": rows }))
        .expect("detections serialize")
}

fn burn_box(canvas: &mut image::GrayImage, d: &Detection) {
    let (w, h) = (canvas.width() as i64, canvas.height() as i64);
    let (x0, y0) = (d.bbox.x.round() as i64, d.bbox.y.round() as i64);
    let (x1, y1) = (d.bbox.x_max().round() as i64, d.bbox.y_max().round() as i64);
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            canvas.put_pixel(x as u32, y as u32, image::Luma([255]));
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

fn cmd_gradcheck(seed: u64) -> Result<(), Error> {
    let start = std::time::Instant::now();
    let entries = run_full_suite(seed)?;
    let mut failures = 0;
    for e in &entries {
        let verdict = if e.passed { "PASS" } else { "FAIL" };
        let role = if e.expect_fail { " [negative control]" } else { "" };
        println!(
            "{verdict}  {:<34} max {:>9.2e}  mean {:>9.2e}  tol {:.0e}{role}",
            e.name, e.report.max_rel_err, e.report.mean_rel_err, e.tolerance
        );
        if !e.passed {
            failures += 1;
        }
    }
    println!(
        "{} checks in {:.1}s, {} failed",
        entries.len(),
        start.elapsed().as_secs_f64(),
        failures
    );
    if failures > 0 {
        return Err(Error::GradCheck(format!("{failures} gradient checks failed")));
    }
    Ok(())
}

fn cmd_ablate(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    dataset: Option<&Path>,
    strict: bool,
) -> Result<(), Error> {
    let base = load_config(config, seed, dataset, strict)?;
    std::fs::create_dir_all(out)?;
    let rows = base.ablation_rows();

    let mut summaries = Vec::new();
    for (i, cfg) in rows.iter().enumerate() {
        let samples = load_samples(cfg)?;
        let (train_set, test_set, _) = split_samples(cfg, samples)?;
        let mut model = FpaeNet::<f32>::new(cfg)?;
        let params = model.parameter_elements();
        drop(model);
        println!(
            "row {}: new_channels={} enhancement={} attention={} ({params} parameters)",
            i + 1,
            cfg.neck.second_channel,
            cfg.neck.enhancement,
            cfg.neck.attention
        );
        let record = train_one(
            cfg,
            &train_set,
            &test_set,
            &out.join(format!("ablation-row{}.fpae", i + 1)),
            true,
        )?;
        std::fs::write(out.join(format!("ablation-row{}.json", i + 1)), record.to_json())?;
        let map = record.final_eval.as_ref().map(|r| r.map);
        let last_loss = record.losses.last().copied().unwrap_or(f64::NAN);
        summaries.push((cfg.clone(), params, last_loss, map));
    }

    let check = |b: bool| if b { "x" } else { " " };
    println!("\n| New Channels | Enhancement | Attention | Parameters | Final loss | mAP |");
    println!("|--------------|-------------|-----------|------------|------------|-----|");
    for (cfg, params, loss, map) in &summaries {
        println!(
            "| {:<12} | {:<11} | {:<9} | {params:>10} | {loss:>10.5} | {} |",
            check(cfg.neck.second_channel),
            check(cfg.neck.enhancement),
            check(cfg.neck.attention),
            map.map_or("n/a".to_string(), |m| format!("{m:.4}")),
        );
    }
    let table: Vec<serde_json::Value> = summaries
        .iter()
        .map(|(cfg, params, loss, map)| {
            serde_json::json!({
                "new_channels": cfg.neck.second_channel,
                "enhancement": cfg.neck.enhancement,
                "attention": cfg.neck.attention,
                "parameters": params,
                "final_loss": loss,
                "map": map,
            })
        })
        .collect();
    std::fs::write(
        out.join("ablation.json"),
        serde_json::to_string_pretty(&table).expect("table serializes"),
    )?;
    Ok(())
}
