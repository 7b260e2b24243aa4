//! Versioned binary checkpoints.
//!
//! Layout: magic `SNCK`, format version, a free-form metadata string
//! (provenance), the model config as JSON, then a manifest of named
//! tensors (learnable parameters plus batch-norm running statistics) with
//! raw little-endian `f64` payloads. Round trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelConfig};

const MAGIC: &[u8; 4] = b"SNCK";
const VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_STATE: u8 = 1;

/// Serializes the model and a metadata string.
pub fn save_checkpoint(path: &Path, model: &mut Model, meta: &str) -> Result<()> {
    let mut tensors: Vec<(String, u8, Vec<usize>, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |name, p| {
        tensors.push((
            name.to_string(),
            KIND_PARAM,
            p.value.shape().to_vec(),
            p.value.data().to_vec(),
        ));
    });
    model.visit_state(&mut |name, v| {
        tensors.push((name.to_string(), KIND_STATE, vec![v.len()], v.clone()));
    });

    let config_json = serde_json::to_vec(&model.config)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, kind, shape, data) in &tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(*kind);
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint, rebuilding the model from the embedded config and
/// restoring every tensor. Returns the model and the metadata string.
pub fn load_checkpoint(path: &Path) -> Result<(Model, String)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = r.u32()? as usize;
    let meta = String::from_utf8(r.take(meta_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)?;

    let mut tensors: BTreeMap<String, (u8, Vec<usize>, Vec<f64>)> = BTreeMap::new();
    let count = r.u32()?;
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let kind = r.u8()?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, (kind, shape, data));
    }

    let mut model = build_model(&config, 0)?;
    let mut missing = Vec::new();
    let mut err: Option<Error> = None;
    model.visit_params(&mut |name, p| {
        match tensors.remove(name) {
            Some((KIND_PARAM, shape, data)) if shape == p.value.shape() => {
                p.value.data_mut().copy_from_slice(&data);
            }
            Some((_, shape, _)) => {
                err = Some(Error::Checkpoint(format!(
                    "tensor `{name}`: shape {:?} does not match model shape {:?}",
                    shape,
                    p.value.shape()
                )));
            }
            None => missing.push(name.to_string()),
        }
    });
    model.visit_state(&mut |name, v| {
        match tensors.remove(name) {
            Some((KIND_STATE, _, data)) if data.len() == v.len() => v.copy_from_slice(&data),
            Some(_) => {
                err = Some(Error::Checkpoint(format!(
                    "state tensor `{name}` has the wrong size"
                )))
            }
            None => missing.push(name.to_string()),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "checkpoint is missing tensors: {}",
            missing.join(", ")
        )));
    }
    if !tensors.is_empty() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has tensors the model does not: {}",
            tensors.keys().cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AcousticVariant, ModelKind};

    #[test]
    fn round_trip_is_bit_exact() {
        let config = ModelConfig {
            kind: ModelKind::Fused,
            acoustic_variant: AcousticVariant::SincLstm,
            num_filters: 3,
            kernel_length: 21,
            stride: 10,
            chunk_samples: 200,
            acoustic_vec_dim: 5,
            linguistic_vec_dim: 6,
            vocab_size: 16,
            embedding_dim: 3,
            linguistic_lstm_hidden: 4,
            attention_key_dim: 2,
            acoustic_lstm_hidden: 3,
            dnn_hidden: 4,
            max_seq_len: 8,
            ..ModelConfig::desk_default()
        };
        let mut model = build_model(&config, 13).unwrap();
        // Perturb running stats so state tensors are non-trivial.
        model.visit_state(&mut |_, v| {
            for (i, x) in v.iter_mut().enumerate() {
                *x = 0.1 * i as f64 + 0.01;
            }
        });

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &mut model, "meta-string").unwrap();
        let (mut loaded, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, "meta-string");
        assert_eq!(loaded.config, model.config);

        let mut a = Vec::new();
        model.visit_params(&mut |n, p| a.push((n.to_string(), p.value.data().to_vec())));
        let mut b = Vec::new();
        loaded.visit_params(&mut |n, p| b.push((n.to_string(), p.value.data().to_vec())));
        for ((na, va), (nb, vb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert_eq!(va.len(), vb.len());
            for (x, y) in va.iter().zip(vb) {
                assert_eq!(x.to_bits(), y.to_bits(), "{na}");
            }
        }
        let mut sa = Vec::new();
        model.visit_state(&mut |n, v| sa.push((n.to_string(), v.clone())));
        let mut sb = Vec::new();
        loaded.visit_state(&mut |n, v| sb.push((n.to_string(), v.clone())));
        assert_eq!(sa, sb);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::write(&path, b"SN").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
