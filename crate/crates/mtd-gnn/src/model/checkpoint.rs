//! Single-file checkpoint format: an 8-byte magic, a little-endian u64
//! JSON-manifest length, the manifest (model kind, hyperparameters,
//! relations, parameter names and shapes), then every parameter's values
//! as raw little-endian f64 in manifest order. Saving and loading is
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GnnModel, Model, ModelKind, ParamSet, RnnModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MTDCKPT1";

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    model: ModelKind,
    hyper: serde_json::Value,
    relations: Vec<crate::loss::RelationSpec>,
    params: Vec<ParamMeta>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let (kind, hyper) = match model {
        Model::Gnn(m) => (
            ModelKind::Gnn,
            serde_json::to_value(m.hyper).map_err(|e| Error::json(path, e))?,
        ),
        Model::Rnn(m) => (
            ModelKind::BaselineRnn,
            serde_json::to_value(m.hyper).map_err(|e| Error::json(path, e))?,
        ),
    };
    let params = model.params();
    let manifest = Manifest {
        model: kind,
        hyper,
        relations: model.relations().to_vec(),
        params: (0..params.len())
            .map(|i| ParamMeta {
                name: params.name(i).to_string(),
                shape: params.shape(i).to_vec(),
            })
            .collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest).map_err(|e| Error::json(path, e))?;

    let mut out =
        Vec::with_capacity(16 + manifest_bytes.len() + params.n_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for i in 0..params.len() {
        for &v in params.values(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.len() - 16;
    if len > body {
        return Err(Error::Checkpoint(format!(
            "{}: manifest length {len} exceeds file body {body}",
            path.display()
        )));
    }
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..16 + len]).map_err(|e| Error::json(path, e))?;

    let mut params = ParamSet::new();
    let mut cursor = 16 + len;
    for meta in &manifest.params {
        let n: usize = meta.shape.iter().product();
        let end = cursor + n * 8;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: parameter {} truncated (need {} bytes past offset {})",
                path.display(),
                meta.name,
                n * 8,
                cursor
            )));
        }
        let values: Vec<f64> = bytes[cursor..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(meta.name.clone(), meta.shape.clone(), values);
        cursor = end;
    }
    if cursor != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes after parameters",
            path.display(),
            bytes.len() - cursor
        )));
    }
    for r in &manifest.relations {
        r.validate()?;
    }

    let model = match manifest.model {
        ModelKind::Gnn => {
            let hyper = serde_json::from_value(manifest.hyper)
                .map_err(|e| Error::json(path, e))?;
            Model::Gnn(GnnModel {
                hyper,
                relations: manifest.relations,
                params,
            })
        }
        ModelKind::BaselineRnn => {
            let hyper = serde_json::from_value(manifest.hyper)
                .map_err(|e| Error::json(path, e))?;
            Model::Rnn(RnnModel {
                hyper,
                relations: manifest.relations,
                params,
            })
        }
    };
    Ok(model)
}
