//! JSON checkpoints for student and teacher parameters.
//!
//! Tensors serialize their f64 payload through serde_json, whose shortest
//! round-trip float formatting makes save/load bit-exact for finite values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, StudentParams, TeacherParams};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    Format(String),
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    kind: String,
    config: ModelConfig,
    params: Vec<NamedTensor>,
}

fn to_named(params: &[(String, &Tensor)]) -> Vec<NamedTensor> {
    params
        .iter()
        .map(|(name, t)| NamedTensor {
            name: name.clone(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect()
}

fn restore(target: &mut [(String, &mut Tensor)], stored: &[NamedTensor]) -> Result<(), CheckpointError> {
    if target.len() != stored.len() {
        return Err(CheckpointError::Format(format!(
            "expected {} parameter tensors, found {}",
            target.len(),
            stored.len()
        )));
    }
    for (name, t) in target.iter_mut() {
        let Some(s) = stored.iter().find(|s| &s.name == name) else {
            return Err(CheckpointError::Format(format!("missing parameter {name}")));
        };
        if s.shape != t.shape() || s.data.len() != t.numel() {
            return Err(CheckpointError::Format(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                s.shape,
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&s.data);
    }
    Ok(())
}

fn write_doc(doc: &Document, path: &Path) -> Result<(), CheckpointError> {
    let json = serde_json::to_string(doc).map_err(|e| CheckpointError::Format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

fn read_doc(path: &Path, kind: &str) -> Result<Document, CheckpointError> {
    let text = std::fs::read_to_string(path)?;
    let doc: Document =
        serde_json::from_str(&text).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if doc.kind != kind {
        return Err(CheckpointError::Format(format!(
            "checkpoint kind '{}' where '{kind}' was expected",
            doc.kind
        )));
    }
    Ok(doc)
}

pub fn save_student(
    cfg: &ModelConfig,
    params: &StudentParams,
    path: &Path,
) -> Result<(), CheckpointError> {
    write_doc(
        &Document {
            kind: "student".into(),
            config: cfg.clone(),
            params: to_named(&params.named()),
        },
        path,
    )
}

pub fn load_student(path: &Path) -> Result<(ModelConfig, StudentParams), CheckpointError> {
    let doc = read_doc(path, "student")?;
    let mut params = StudentParams::init(&doc.config, 0)
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    restore(&mut params.named_mut(), &doc.params)?;
    Ok((doc.config, params))
}

pub fn save_teacher(
    cfg: &ModelConfig,
    params: &TeacherParams,
    path: &Path,
) -> Result<(), CheckpointError> {
    write_doc(
        &Document {
            kind: "teacher".into(),
            config: cfg.clone(),
            params: to_named(&params.named()),
        },
        path,
    )
}

pub fn load_teacher(path: &Path) -> Result<(ModelConfig, TeacherParams), CheckpointError> {
    let doc = read_doc(path, "teacher")?;
    let mut params = TeacherParams::init(&doc.config, 0)
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    restore(&mut params.named_mut(), &doc.params)?;
    Ok((doc.config, params))
}
