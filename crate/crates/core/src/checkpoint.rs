//! Versioned binary checkpoint: magic "FPAE", format version, the canonical
//! config echo, then per-parameter records (name, shape, raw values, and the
//! optimizer moments). All integers and floats are little-endian; the float
//! width byte records the working precision.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::FpaeNet;
use crate::tensor::adam::{Adam, AdamConfig, Moments};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"FPAE";
const VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_values<T: Scalar>(w: &mut impl Write, values: &[T]) -> Result<()> {
    if std::mem::size_of::<T>() == 4 {
        for v in values {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    } else {
        for v in values {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4)?.try_into().unwrap()))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r, 8)?.try_into().unwrap()))
}

fn read_values<T: Scalar>(r: &mut impl Read, n: usize, width: u8) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    match width {
        4 => {
            let raw = read_exact(r, n * 4)?;
            for chunk in raw.chunks_exact(4) {
                out.push(T::from_f64(f32::from_le_bytes(chunk.try_into().unwrap()) as f64));
            }
        }
        8 => {
            let raw = read_exact(r, n * 8)?;
            for chunk in raw.chunks_exact(8) {
                out.push(T::from_f64(f64::from_le_bytes(chunk.try_into().unwrap())));
            }
        }
        other => return Err(Error::Checkpoint(format!("unsupported float width {other}"))),
    }
    Ok(out)
}

/// Writes the model parameters and optimizer state.
pub fn save<T: Scalar>(path: &Path, model: &mut FpaeNet<T>, adam: &Adam<T>) -> Result<()> {
    let mut params = Vec::new();
    let config_echo = model.config().to_text();
    model.collect_params(&mut params);

    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    w.write_all(&[std::mem::size_of::<T>() as u8])?;
    write_u64(&mut w, adam.step_count())?;
    write_u32(&mut w, config_echo.len() as u32)?;
    w.write_all(config_echo.as_bytes())?;
    write_u32(&mut w, params.len() as u32)?;
    for (name, tensor) in &params {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &d in tensor.shape() {
            write_u64(&mut w, d as u64)?;
        }
        write_values(&mut w, tensor.data())?;
        match adam.moments().get(name) {
            Some(m) => {
                w.write_all(&[1])?;
                write_values(&mut w, &m.m)?;
                write_values(&mut w, &m.v)?;
            }
            None => w.write_all(&[0])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Everything read back from a checkpoint file.
pub struct Loaded<T: Scalar> {
    pub config: ModelConfig,
    pub params: Vec<(String, Vec<usize>, Vec<T>)>,
    pub moments: BTreeMap<String, Moments<T>>,
    pub step: u64,
}

pub fn load<T: Scalar>(path: &Path) -> Result<Loaded<T>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = read_exact(&mut r, 4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}; not a checkpoint file"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} unsupported (expected {VERSION})"
        )));
    }
    let width = read_exact(&mut r, 1)?[0];
    if width as usize != std::mem::size_of::<T>() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {width}-byte floats but this run uses {}-byte",
            std::mem::size_of::<T>()
        )));
    }
    let step = read_u64(&mut r)?;
    let echo_len = read_u32(&mut r)? as usize;
    let echo = String::from_utf8(read_exact(&mut r, echo_len)?)
        .map_err(|e| Error::Checkpoint(format!("config echo is not UTF-8: {e}")))?;
    let config = ModelConfig::from_text(&echo)?;

    let count = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(count);
    let mut moments = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_exact(&mut r, name_len)?)
            .map_err(|e| Error::Checkpoint(format!("parameter name is not UTF-8: {e}")))?;
        let ndim = read_exact(&mut r, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = read_values::<T>(&mut r, numel, width)?;
        let has_moments = read_exact(&mut r, 1)?[0];
        if has_moments == 1 {
            let m = read_values::<T>(&mut r, numel, width)?;
            let v = read_values::<T>(&mut r, numel, width)?;
            moments.insert(name.clone(), Moments { m, v });
        }
        params.push((name, shape, data));
    }
    Ok(Loaded {
        config,
        params,
        moments,
        step,
    })
}

/// Rebuilds a model and optimizer from a checkpoint. When `expected` is
/// given, any config divergence is rejected with a field-level diff.
pub fn restore<T: Scalar>(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<(FpaeNet<T>, Adam<T>)> {
    let loaded = load::<T>(path)?;
    if let Some(expected) = expected {
        let diff = expected.diff(&loaded.config);
        if !diff.is_empty() {
            return Err(Error::CheckpointMismatch(diff.join("\n")));
        }
    }
    let mut model = FpaeNet::<T>::new(&loaded.config)?;
    let mut slots = Vec::new();
    model.collect_params(&mut slots);
    if slots.len() != loaded.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model defines {}",
            loaded.params.len(),
            slots.len()
        )));
    }
    for ((name, slot), (file_name, shape, data)) in slots.into_iter().zip(loaded.params) {
        if name != file_name || slot.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter `{file_name}` {shape:?} does not line up with model `{name}` {:?}",
                slot.shape()
            )));
        }
        *slot = Tensor::param(data, &shape)?;
    }
    let adam_cfg = AdamConfig {
        lr: loaded.config.optim.adam.lr,
        beta1: loaded.config.optim.adam.beta1,
        beta2: loaded.config.optim.adam.beta2,
        eps: loaded.config.optim.adam.eps,
    };
    let adam = Adam::restore(adam_cfg, loaded.step, loaded.moments);
    Ok((model, adam))
}
