//! Training data: a deterministic synthetic generator of low-contrast
//! elliptical lesions over textured backgrounds, ingestion of real grayscale
//! images with CSV box annotations, and seeded split management.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{BoxXYWH, GroundTruthBox};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One training/evaluation item: a [1,1,S,S] grayscale image in [0,1] with
/// its annotated boxes.
#[derive(Debug)]
pub struct Sample<T: Scalar> {
    pub image: Tensor<T>,
    pub gts: Vec<GroundTruthBox>,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Inclusive range of lesions per image.
    pub lesion_count: (usize, usize),
    /// Additive intensity of a lesion above the local background. Low values
    /// mimic ground-glass opacity; the easy presets push this up.
    pub contrast: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 128,
            lesion_count: (1, 2),
            contrast: (0.1, 0.3),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::InvalidConfig(format!(
                "synthetic image size {} is too small",
                self.image_size
            )));
        }
        if self.lesion_count.0 > self.lesion_count.1 {
            return Err(Error::InvalidConfig(format!(
                "lesion count range {:?} is inverted",
                self.lesion_count
            )));
        }
        if !(0.0..=1.5).contains(&self.contrast.0) || self.contrast.0 > self.contrast.1 {
            return Err(Error::InvalidConfig(format!(
                "contrast range {:?} is invalid",
                self.contrast
            )));
        }
        Ok(())
    }
}

/// Smoothed noise field in roughly [0.15, 0.45]: a coarse uniform grid,
/// bilinearly upsampled, plus a little per-pixel grain.
fn background(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let coarse_step = (size / 8).max(2);
    let grid = size / coarse_step + 2;
    let coarse: Vec<f64> = (0..grid * grid).map(|_| rng.gen_range(0.15..0.45)).collect();
    let mut img = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let fy = y as f64 / coarse_step as f64;
            let fx = x as f64 / coarse_step as f64;
            let (y0, x0) = (fy as usize, fx as usize);
            let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
            let at = |yy: usize, xx: usize| coarse[yy.min(grid - 1) * grid + xx.min(grid - 1)];
            let top = at(y0, x0) * (1.0 - dx) + at(y0, x0 + 1) * dx;
            let bot = at(y0 + 1, x0) * (1.0 - dx) + at(y0 + 1, x0 + 1) * dx;
            img[y * size + x] = top * (1.0 - dy) + bot * dy;
        }
    }
    for v in &mut img {
        *v += rng.gen_range(-0.02..0.02);
    }
    img
}

const LESION_STREAM_SALT: u64 = 0xA076_1D64_78BD_642F;
const MAX_PLACEMENT_RETRIES: usize = 50;

/// Deterministic synthetic sample: background and lesion streams are seeded
/// separately so the pure background for a given seed is recoverable by
/// generating with a zero lesion count.
pub fn generate_sample<T: Scalar>(seed: u64, cfg: &SynthConfig) -> Result<Sample<T>> {
    cfg.validate()?;
    let size = cfg.image_size;
    let mut bg_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = background(&mut bg_rng, size);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ LESION_STREAM_SALT);
    let count = rng.gen_range(cfg.lesion_count.0..=cfg.lesion_count.1);
    let s = size as f64;
    let mut gts: Vec<GroundTruthBox> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_RETRIES {
            let rx = rng.gen_range(0.08 * s..0.2 * s);
            let ry = rng.gen_range(0.08 * s..0.2 * s);
            let cx = rng.gen_range(rx + 1.0..s - rx - 1.0);
            let cy = rng.gen_range(ry + 1.0..s - ry - 1.0);
            let rect = BoxXYWH::new(cx - rx, cy - ry, 2.0 * rx, 2.0 * ry);
            let overlaps = gts.iter().any(|g| {
                crate::boxes::iou(&rect, &g.rect).map(|v| v > 0.05).unwrap_or(true)
            });
            if overlaps {
                continue;
            }
            let contrast = rng.gen_range(cfg.contrast.0..=cfg.contrast.1);
            for y in (cy - ry).floor().max(0.0) as usize..=((cy + ry).ceil() as usize).min(size - 1)
            {
                for x in
                    (cx - rx).floor().max(0.0) as usize..=((cx + rx).ceil() as usize).min(size - 1)
                {
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    let d2 = dx * dx + dy * dy;
                    if d2 < 1.0 {
                        img[y * size + x] += contrast * (1.0 - d2).powf(1.5);
                    }
                }
            }
            gts.push(GroundTruthBox { rect, class_id: 0 });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Dataset(format!(
                "could not place lesion {} of {count} after {MAX_PLACEMENT_RETRIES} tries",
                gts.len() + 1
            )));
        }
    }

    let data: Vec<T> = img.iter().map(|&v| T::from_f64(v.clamp(0.0, 1.0))).collect();
    Ok(Sample {
        image: Tensor::from_vec(data, &[1, 1, size, size])?,
        gts,
        id: format!("synth-{seed:08x}"),
    })
}

/// Generates `count` samples from consecutive seeds.
pub fn generate_dataset<T: Scalar>(
    base_seed: u64,
    count: usize,
    cfg: &SynthConfig,
) -> Result<Vec<Sample<T>>> {
    (0..count)
        .map(|i| generate_sample(base_seed.wrapping_add(i as u64), cfg))
        .collect()
}

/// Where a dataset came from; persisted with the split so runs are
/// reconstructable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { seed: u64, count: usize },
    Directory { dir: PathBuf, annotations: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub source: DataSource,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Seeded shuffle followed by a prefix split. The test side takes
/// round(fraction * n) ids; both sides must end up nonempty.
pub fn split_ids(ids: &[String], test_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "test fraction must lie in (0,1), got {test_fraction}"
        )));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let test_count = (ids.len() as f64 * test_fraction).round() as usize;
    if test_count == 0 || test_count >= ids.len() {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} leaves an empty split for {} ids",
            ids.len()
        )));
    }
    let test = shuffled[..test_count].to_vec();
    let train = shuffled[test_count..].to_vec();
    Ok((train, test))
}

/// Itemized ingestion problems; lenient loads skip and report, strict loads
/// abort on the first.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub loaded: usize,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LoadConfig {
    pub target_size: usize,
    pub extension: String,
    pub strict: bool,
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    #[serde(rename = "patientId")]
    patient_id: String,
    x: Option<f64>,
    y: Option<f64>,
    width: Option<f64>,
    height: Option<f64>,
    #[serde(rename = "Target")]
    target: u8,
}

/// Loads a directory of 8-bit grayscale images plus a CSV of boxes
/// (patientId,x,y,width,height,Target; Target 0 rows carry no box). Images
/// are bilinearly resized to the configured input size and boxes rescaled
/// by the same factors.
pub fn load_dataset<T: Scalar>(
    image_dir: &Path,
    annotations: &Path,
    cfg: &LoadConfig,
) -> Result<(Vec<Sample<T>>, LoadReport)> {
    let mut reader = csv::Reader::from_path(annotations)?;
    // group rows by id, keeping first-appearance order
    let mut order: Vec<String> = Vec::new();
    let mut boxes: HashMap<String, Vec<BoxXYWH>> = HashMap::new();
    let mut report = LoadReport::default();
    for (line, row) in reader.deserialize::<AnnotationRow>().enumerate() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let msg = format!("annotation row {}: {e}", line + 2);
                if cfg.strict {
                    return Err(Error::Dataset(msg));
                }
                report.skipped.push(msg);
                continue;
            }
        };
        if !boxes.contains_key(&row.patient_id) {
            order.push(row.patient_id.clone());
            boxes.insert(row.patient_id.clone(), Vec::new());
        }
        if row.target == 0 {
            continue;
        }
        match (row.x, row.y, row.width, row.height) {
            (Some(x), Some(y), Some(w), Some(h)) if w > 0.0 && h > 0.0 => {
                boxes.get_mut(&row.patient_id).unwrap().push(BoxXYWH::new(x, y, w, h));
            }
            _ => {
                let msg = format!(
                    "annotation row {}: positive target with malformed box",
                    line + 2
                );
                if cfg.strict {
                    return Err(Error::Dataset(msg));
                }
                report.skipped.push(msg);
            }
        }
    }

    let mut samples = Vec::with_capacity(order.len());
    for id in order {
        match load_one::<T>(image_dir, &id, boxes.remove(&id).unwrap_or_default(), cfg) {
            Ok(sample) => {
                samples.push(sample);
                report.loaded += 1;
            }
            Err(e) => {
                let msg = format!("{id}: {e}");
                if cfg.strict {
                    return Err(Error::Dataset(msg));
                }
                report.skipped.push(msg);
            }
        }
    }
    Ok((samples, report))
}

fn load_one<T: Scalar>(
    dir: &Path,
    id: &str,
    native_boxes: Vec<BoxXYWH>,
    cfg: &LoadConfig,
) -> Result<Sample<T>> {
    let path = dir.join(format!("{id}.{}", cfg.extension));
    let img = image::open(&path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .into_luma8();
    let (nw, nh) = (img.width() as usize, img.height() as usize);
    let size = cfg.target_size;
    let resized = image::imageops::resize(
        &img,
        size as u32,
        size as u32,
        image::imageops::FilterType::Triangle,
    );
    let data: Vec<T> = resized
        .pixels()
        .map(|p| T::from_f64(p.0[0] as f64 / 255.0))
        .collect();

    let sx = size as f64 / nw as f64;
    let sy = size as f64 / nh as f64;
    let mut gts = Vec::with_capacity(native_boxes.len());
    for b in native_boxes {
        let scaled = BoxXYWH::new(b.x * sx, b.y * sy, b.w * sx, b.h * sy);
        if scaled.x < -1e-9
            || scaled.y < -1e-9
            || scaled.x_max() > size as f64 + 1e-9
            || scaled.y_max() > size as f64 + 1e-9
        {
            return Err(Error::Dataset(format!(
                "box ({}, {}, {}, {}) falls outside the {nw}x{nh} image",
                b.x, b.y, b.w, b.h
            )));
        }
        gts.push(GroundTruthBox {
            rect: scaled.clip(size as f64),
            class_id: 0,
        });
    }
    Ok(Sample {
        image: Tensor::from_vec(data, &[1, 1, size, size])?,
        gts,
        id: id.to_string(),
    })
}


#[cfg(test)]
mod load_tests {
    use super::*;

    fn write_png(dir: &Path, id: &str, size: u32) {
        let img = image::GrayImage::from_fn(size, size, |x, y| {
            image::Luma([((x + y) % 256) as u8])
        });
        img.save(dir.join(format!("{id}.png"))).unwrap();
    }

    fn cfg(strict: bool) -> LoadConfig {
        LoadConfig {
            target_size: 128,
            extension: "png".to_string(),
            strict,
        }
    }

    #[test]
    fn identity_resize_keeps_boxes() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "id1", 128);
        let csv_path = dir.path().join("boxes.csv");
        std::fs::write(
            &csv_path,
            "patientId,x,y,width,height,Target\nid1,10,20,30,40,1\n",
        )
        .unwrap();
        let (samples, report) = load_dataset::<f32>(dir.path(), &csv_path, &cfg(true)).unwrap();
        assert_eq!(report.loaded, 1);
        assert_eq!(samples[0].gts.len(), 1);
        let g = samples[0].gts[0].rect;
        assert_eq!((g.x, g.y, g.w, g.h), (10.0, 20.0, 30.0, 40.0));
        assert!(samples[0].image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn downscale_halves_boxes() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "id1", 256);
        let csv_path = dir.path().join("boxes.csv");
        std::fs::write(
            &csv_path,
            "patientId,x,y,width,height,Target\nid1,10,20,30,40,1\n",
        )
        .unwrap();
        let (samples, _) = load_dataset::<f32>(dir.path(), &csv_path, &cfg(true)).unwrap();
        let g = samples[0].gts[0].rect;
        assert_eq!((g.x, g.y, g.w, g.h), (5.0, 10.0, 15.0, 20.0));
    }

    #[test]
    fn target_zero_rows_yield_boxless_samples() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "neg", 128);
        let csv_path = dir.path().join("boxes.csv");
        std::fs::write(&csv_path, "patientId,x,y,width,height,Target\nneg,,,,,0\n").unwrap();
        let (samples, _) = load_dataset::<f32>(dir.path(), &csv_path, &cfg(true)).unwrap();
        assert_eq!(samples.len(), 1);
        assert!(samples[0].gts.is_empty());
    }

    #[test]
    fn strict_aborts_lenient_skips() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "ok", 128);
        // "missing" has a row but no image file
        let csv_path = dir.path().join("boxes.csv");
        std::fs::write(
            &csv_path,
            "patientId,x,y,width,height,Target\nok,1,1,10,10,1\nmissing,1,1,10,10,1\n",
        )
        .unwrap();
        assert!(load_dataset::<f32>(dir.path(), &csv_path, &cfg(true)).is_err());
        let (samples, report) = load_dataset::<f32>(dir.path(), &csv_path, &cfg(false)).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(report.loaded, 1);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].contains("missing"));
    }

    #[test]
    fn out_of_bounds_box_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "id1", 128);
        let csv_path = dir.path().join("boxes.csv");
        std::fs::write(
            &csv_path,
            "patientId,x,y,width,height,Target\nid1,100,100,60,60,1\n",
        )
        .unwrap();
        let err = load_dataset::<f32>(dir.path(), &csv_path, &cfg(true)).unwrap_err();
        assert!(err.to_string().contains("outside"));
    }
}
