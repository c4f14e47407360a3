//! On-disk checkpoint: a `manifest.txt` of `key=value` lines plus one
//! little-endian `f32` blob per tensor.
//!
//! ```text
//! format=decayrec-checkpoint
//! version=1
//! config={"max_len":50,...}
//! meta.epoch=3
//! tensor.item_emb=2001x50
//! tensor.layers.0.w_uv=50x150
//! ```
//!
//! The blob for tensor `name` is `name.f32`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

use super::{ModelConfig, ModelParams, Recommender};

const FORMAT: &str = "decayrec-checkpoint";
const VERSION: &str = "1";
const MANIFEST: &str = "manifest.txt";

/// A loaded model plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Recommender,
    pub meta: BTreeMap<String, String>,
}

/// Writes `model` into `dir` (created if missing). Values are stored as
/// `f32`, so a round trip is bit-exact when the parameters already hold
/// `f32`-representable values (see [`ModelParams::quantize_f32`]).
pub fn save_checkpoint(dir: &Path, model: &Recommender, meta: &BTreeMap<String, String>) -> Result<()> {
    if let Some(name) = model.params.first_non_finite() {
        return Err(Error::Numeric(format!("refusing to save non-finite tensor {name}")));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = serde_json::to_string(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    let mut manifest = format!("format={FORMAT}\nversion={VERSION}\nconfig={config}\n");
    for (k, v) in meta {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::Config(format!("metadata entry {k:?} cannot be stored in a manifest line")));
        }
        manifest.push_str(&format!("meta.{k}={v}\n"));
    }
    for (name, m) in model.params.tensors() {
        manifest.push_str(&format!("tensor.{name}={}x{}\n", m.rows(), m.cols()));
        let bytes: Vec<u8> = m.as_slice().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        let path = dir.join(format!("{name}.f32"));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: usize, msg: &str| Error::Data(format!("{}:{line}: {msg}", path.display()));

    let mut format = None;
    let mut version = None;
    let mut config = None;
    let mut meta = BTreeMap::new();
    let mut shapes = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| bad(line_no, "expected key=value"))?;
        match key {
            "format" => format = Some(value.to_string()),
            "version" => version = Some(value.to_string()),
            "config" => {
                let cfg: ModelConfig =
                    serde_json::from_str(value).map_err(|e| bad(line_no, &format!("invalid config: {e}")))?;
                config = Some(cfg);
            }
            _ => {
                if let Some(k) = key.strip_prefix("meta.") {
                    meta.insert(k.to_string(), value.to_string());
                } else if let Some(name) = key.strip_prefix("tensor.") {
                    let (r, c) = value
                        .split_once('x')
                        .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
                        .ok_or_else(|| bad(line_no, "tensor shape must be ROWSxCOLS"))?;
                    shapes.insert(name.to_string(), (r, c));
                } else {
                    return Err(bad(line_no, &format!("unknown key {key:?}")));
                }
            }
        }
    }
    if format.as_deref() != Some(FORMAT) {
        return Err(Error::Data(format!("{} is not a {FORMAT} manifest", path.display())));
    }
    if version.as_deref() != Some(VERSION) {
        return Err(Error::Data(format!("unsupported checkpoint version {version:?}")));
    }
    let config = config.ok_or_else(|| Error::Data(format!("{} has no config line", path.display())))?;
    config.validate()?;

    let expected = ModelParams::shapes(&config);
    if expected.len() != shapes.len() {
        return Err(Error::Data(format!(
            "checkpoint lists {} tensors, config needs {}",
            shapes.len(),
            expected.len()
        )));
    }
    let mut tensors = BTreeMap::new();
    for (name, shape) in &expected {
        let listed = shapes
            .get(name)
            .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor {name}")))?;
        if listed != shape {
            return Err(Error::Data(format!("tensor {name} has shape {listed:?}, config needs {shape:?}")));
        }
        let blob = dir.join(format!("{name}.f32"));
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        if bytes.len() != shape.0 * shape.1 * 4 {
            return Err(Error::Data(format!(
                "{} holds {} bytes, expected {}",
                blob.display(),
                bytes.len(),
                shape.0 * shape.1 * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        tensors.insert(name.clone(), Matrix::new(shape.0, shape.1, data)?);
    }

    let mut params = ModelParams::zeros(&config);
    for (name, m) in params.tensors_mut() {
        *m = tensors.remove(&name).expect("every expected tensor was loaded");
    }
    if let Some(name) = params.first_non_finite() {
        return Err(Error::Numeric(format!("checkpoint tensor {name} holds non-finite values")));
    }
    Ok(Checkpoint {
        model: Recommender::from_parts(config, params)?,
        meta,
    })
}
