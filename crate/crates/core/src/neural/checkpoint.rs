//! Checkpoints: `manifest.json` plus `params.bin` (little-endian f64, tensors
//! in manifest order, embedding matrix last).

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::ArchConfig;
use super::model::Model;
use super::params::init_params;
use super::tensors::{TensorKind, Tensors};
use crate::corpus::CorpusSchema;
use crate::embeddings::EmbeddingTable;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";
const EMBEDDING_TENSOR: &str = "embedding";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub dtype: String,
    pub config_hash: String,
    pub config: ArchConfig,
    pub schema: CorpusSchema,
    pub tensors: Vec<TensorEntry>,
    pub vocab: Vec<String>,
    pub oov_rows: Vec<usize>,
}

fn kind_str(k: TensorKind) -> String {
    k.as_str().to_string()
}

/// Writes `model` into directory `dir`.
pub fn save_checkpoint(dir: &Path, model: &Model, schema: &CorpusSchema, config_hash: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let tensors = model.params.tensors();
    let emb = &model.embeddings;
    let mut entries: Vec<TensorEntry> = tensors
        .iter()
        .map(|t| TensorEntry {
            name: t.name.clone(),
            kind: kind_str(t.kind),
            shape: t.shape.clone(),
        })
        .collect();
    entries.push(TensorEntry {
        name: EMBEDDING_TENSOR.into(),
        kind: "embedding".into(),
        shape: vec![emb.matrix.nrows(), emb.matrix.ncols()],
    });
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        dtype: "f64".into(),
        config_hash: config_hash.into(),
        config: model.config.clone(),
        schema: schema.clone(),
        tensors: entries,
        vocab: emb.tokens().to_vec(),
        oov_rows: emb.oov_rows.iter().copied().collect(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::file(&path, e))?;

    let mut bytes = Vec::new();
    for t in &tensors {
        for v in t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in emb.matrix.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let path = dir.join(PARAMS);
    let mut f = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
    f.write_all(&bytes).map_err(|e| Error::file(&path, e))?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]. Any mismatch between
/// the manifest and the architecture it declares is a configuration error.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointManifest)> {
    let path = dir.join(MANIFEST);
    let raw = fs::read(&path).map_err(|e| Error::file(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&raw)?;
    if manifest.version != CHECKPOINT_VERSION || manifest.dtype != "f64" {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {} / dtype {}",
            manifest.version, manifest.dtype
        )));
    }
    manifest.config.check()?;
    manifest.schema.check()?;
    let path = dir.join(PARAMS);
    let bytes = fs::read(&path).map_err(|e| Error::file(&path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Config("params.bin is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut params = init_params(&manifest.config, 0);
    let mut offset = 0;
    {
        let mut slots = params.tensors_mut();
        let (emb_entry, model_entries) = manifest
            .tensors
            .split_last()
            .ok_or_else(|| Error::Config("checkpoint lists no tensors".into()))?;
        if model_entries.len() != slots.len() || emb_entry.name != EMBEDDING_TENSOR {
            return Err(Error::Config(format!(
                "checkpoint lists {} tensors, architecture has {}",
                model_entries.len(),
                slots.len()
            )));
        }
        for (slot, entry) in slots.iter_mut().zip(model_entries) {
            if slot.name != entry.name || slot.shape != entry.shape || kind_str(slot.kind) != entry.kind {
                return Err(Error::Config(format!(
                    "tensor {} {:?} does not match architecture tensor {} {:?}",
                    entry.name, entry.shape, slot.name, slot.shape
                )));
            }
            let n = slot.data.len();
            let src = values
                .get(offset..offset + n)
                .ok_or_else(|| Error::Config("params.bin is truncated".into()))?;
            slot.data.copy_from_slice(src);
            offset += n;
        }
    }
    let emb_shape = &manifest.tensors.last().expect("checked above").shape;
    let (rows, cols) = match emb_shape.as_slice() {
        [r, c] => (*r, *c),
        _ => return Err(Error::Config("embedding tensor is not a matrix".into())),
    };
    let n = rows * cols;
    if values.len() != offset + n {
        return Err(Error::Config(format!(
            "params.bin holds {} values, manifest declares {}",
            values.len(),
            offset + n
        )));
    }
    let matrix = Array2::from_shape_vec((rows, cols), values[offset..].to_vec())
        .map_err(|e| Error::Config(e.to_string()))?;
    let oov: BTreeSet<usize> = manifest.oov_rows.iter().copied().collect();
    let table = EmbeddingTable::from_parts(manifest.vocab.clone(), matrix, oov)?;
    let model = Model::new(manifest.config.clone(), params, Arc::new(table))?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{build_table, PretrainedVectors};
    use crate::neural::Variant;

    fn model(variant: Variant) -> (Model, CorpusSchema) {
        let schema = CorpusSchema::new(&["claim", "premise"], &["support"]).unwrap();
        let mut cfg = ArchConfig::for_schema(variant, 8, &schema);
        cfg.embed_dim = 6;
        let table = build_table(["a", "b", "c"], &PretrainedVectors::empty(6), 3);
        (Model::new(cfg.clone(), init_params(&cfg, 9), Arc::new(table)).unwrap(), schema)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for variant in [Variant::ResArg, Variant::ResAttArg] {
            let (m, schema) = model(variant);
            let dir = tempfile::tempdir().unwrap();
            save_checkpoint(dir.path(), &m, &schema, "abc").unwrap();
            let (back, manifest) = load_checkpoint(dir.path()).unwrap();
            assert_eq!(manifest.config_hash, "abc");
            assert_eq!(back.params, m.params);
            assert_eq!(*back.embeddings, *m.embeddings);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (m, schema) = model(Variant::ResArg);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &m, &schema, "abc").unwrap();
        let path = dir.path().join(MANIFEST);
        let mut manifest: CheckpointManifest = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        manifest.config.hidden = 10;
        fs::write(&path, serde_json::to_vec(&manifest).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Config(_))));
    }
}
