//! Self-describing checkpoint container:
//!
//! ```text
//! b"OFFCKPT\x01" | u64 LE header length | JSON header | f64 LE values
//! ```
//!
//! The header carries the encoder configuration, the classifier width and
//! the name/shape of every tensor. Values are always stored as `f64`, which
//! represents both supported scalar types exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"OFFCKPT\x01";

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    scalar: String,
    num_labels: usize,
    tensors: Vec<TensorHeader>,
}

pub fn save_checkpoint<S: Scalar>(model: &EncoderModel<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        config: model.config().clone(),
        scalar: S::NAME.to_string(),
        num_labels: model.num_labels(),
        tensors: model
            .tensor_shapes()
            .into_iter()
            .map(|(name, rows, cols)| TensorHeader { name, rows, cols })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * model.params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for &p in &model.params {
        buf.extend_from_slice(&p.as_f64().to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<EncoderModel<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| corrupt(&format!("bad header: {e}")))?;
    header.config.validate()?;

    let payload = &bytes[body..];
    if payload.len() % 8 != 0 {
        return Err(corrupt("payload is not a whole number of f64 values"));
    }
    let params: Vec<S> = payload
        .chunks_exact(8)
        .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    let model = EncoderModel::from_parts(header.config, header.num_labels, params)
        .map_err(|e| corrupt(&e.to_string()))?;
    let expected = model.tensor_shapes();
    let matches = expected.len() == header.tensors.len()
        && expected
            .iter()
            .zip(&header.tensors)
            .all(|((n, r, c), t)| *n == t.name && *r == t.rows && *c == t.cols);
    if !matches {
        return Err(corrupt("tensor table does not match the configured architecture"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{build_named, TINY_REFERENCE};
    use crate::task::Task;

    #[test]
    fn round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut model: EncoderModel<f32> = build_named(TINY_REFERENCE, 11).unwrap();
        model.reset_classifier(3, 5);
        save_checkpoint(&model, &path).unwrap();
        let loaded: EncoderModel<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, model);
        let ids = model.tokenize("probe text here", 128).unwrap();
        assert_eq!(
            loaded.classify(std::slice::from_ref(&ids), Task::C).unwrap(),
            model.classify(&[ids], Task::C).unwrap()
        );
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));

        let model: EncoderModel<f64> = build_named(TINY_REFERENCE, 1).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Checkpoint(_))));

        assert!(load_checkpoint::<f64>(dir.path().join("missing.ckpt")).is_err());
    }
}
