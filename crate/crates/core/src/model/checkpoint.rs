//! Checkpoint directory layout:
//! `manifest.json` (format version, config, named parameter refs),
//! `params.stkt` (packed f64 tensors), and `banks/` (knowledge banks).
//! Optimizer state, when present, is stored by the training module.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stket_autograd::io::{parse_ref, Dtype, TensorFileReader, TensorFileWriter};

use crate::error::{CoreError, Result};
use crate::knowledge::Banks;
use crate::model::config::ModelConfig;
use crate::model::params::ModelParams;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestJson {
    format_version: u32,
    config: ModelConfig,
    params: Vec<ParamRef>,
}

#[derive(Serialize, Deserialize)]
struct ParamRef {
    name: String,
    #[serde(rename = "ref")]
    tensor_ref: String,
}

pub fn save_checkpoint(dir: &Path, cfg: &ModelConfig, params: &ModelParams, banks: &Banks) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut writer = TensorFileWriter::create(&dir.join("params.stkt"), "params.stkt")?;
    let mut refs = Vec::new();
    let mut io_err = None;
    params.visit(&mut |name, t| {
        if io_err.is_some() {
            return;
        }
        match writer.append(t, Dtype::F64) {
            Ok(r) => refs.push(ParamRef {
                name,
                tensor_ref: r,
            }),
            Err(e) => io_err = Some(e),
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    writer.finish()?;
    let manifest = ManifestJson {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: cfg.clone(),
        params: refs,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    banks.save(&dir.join("banks"))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelConfig, ModelParams, Banks)> {
    let text = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| CoreError::parse(dir.display().to_string(), format!("missing manifest: {e}")))?;
    let manifest: ManifestJson = serde_json::from_str(&text)
        .map_err(|e| CoreError::parse(dir.display().to_string(), e.to_string()))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CoreError::Config(format!(
            "checkpoint format version {} unsupported (expected {})",
            manifest.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    manifest.config.validate()?;

    // rebuild the parameter skeleton, then overwrite every tensor from disk
    let mut params = ModelParams::init(&manifest.config, 0);
    let mut reader = TensorFileReader::open(&dir.join("params.stkt"))?;
    let mut by_name = std::collections::HashMap::new();
    for r in &manifest.params {
        let (file, offset) = parse_ref(&r.tensor_ref)?;
        if file != "params.stkt" {
            return Err(CoreError::parse(
                dir.display().to_string(),
                format!("unexpected tensor file {file} in manifest"),
            ));
        }
        by_name.insert(r.name.clone(), reader.read_at(offset)?);
    }
    let mut problem = None;
    params.visit_mut(&mut |name, t| {
        if problem.is_some() {
            return;
        }
        match by_name.remove(&name) {
            Some(loaded) => {
                if loaded.shape() != t.shape() {
                    problem = Some(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        loaded.shape(),
                        t.shape()
                    ));
                } else {
                    let requires = t.requires_grad;
                    *t = loaded.with_requires_grad();
                    t.requires_grad = requires;
                }
            }
            None => problem = Some(format!("parameter {name} missing from checkpoint")),
        }
    });
    if let Some(p) = problem {
        return Err(CoreError::Config(p));
    }
    if !by_name.is_empty() {
        let mut extra: Vec<String> = by_name.into_keys().collect();
        extra.sort();
        return Err(CoreError::Config(format!(
            "checkpoint has unknown parameters: {extra:?}"
        )));
    }
    let banks = Banks::load(&dir.join("banks"))?;
    if banks.spatial.num_predicates != manifest.config.num_predicates {
        return Err(CoreError::Config(format!(
            "banks have {} predicates, config expects {}",
            banks.spatial.num_predicates, manifest.config.num_predicates
        )));
    }
    Ok((manifest.config, params, banks))
}
