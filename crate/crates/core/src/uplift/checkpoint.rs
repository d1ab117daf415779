//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `TTLCKPT1`, a little-endian u64 header length, a
//! JSON header (`config`, tensor names/shapes, free-form `meta`), then the
//! tensor payload as row-major little-endian f64 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, UpliftModel};

const MAGIC: &[u8; 8] = b"TTLCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt header: {0}")]
    BadHeader(String),
    #[error("model mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorInfo>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// In-memory checkpoint: config, named tensors, and free-form metadata
/// (training state, epoch counters, selection info).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Array2<f64>)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), CheckpointError> {
        let header = Header {
            format: "ttlift-checkpoint".into(),
            version: 1,
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorInfo {
                    name: name.clone(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for (_, t) in &self.tensors {
            for v in t.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)?;
        let len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; len];
        r.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;

        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in &header.tensors {
            let n = info.rows * info.cols;
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            let data: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Array2::from_shape_vec((info.rows, info.cols), data)
                .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
            tensors.push((info.name.clone(), t));
        }
        Ok(Self {
            config: header.config,
            tensors,
            meta: header.meta,
        })
    }
}

impl UpliftModel {
    /// Snapshot of the model parameters plus caller metadata.
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            config: self.config,
            tensors: self
                .params
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            meta,
        }
    }

    /// Rebuilds a model from a checkpoint; tensor names and shapes must
    /// match the architecture implied by the stored config. Tensors with
    /// auxiliary prefixes (optimizer state) are ignored here.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, CheckpointError> {
        let mut model = UpliftModel::new(ckpt.config, 0)
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        let mut loaded = 0usize;
        for slot in 0..model.params.len() {
            let id = super::tape::ParamId(slot);
            let name = model.params.name(id).to_string();
            let Some(t) = ckpt.tensor(&name) else {
                return Err(CheckpointError::Mismatch(format!("missing tensor {name}")));
            };
            if t.dim() != model.params.get(id).dim() {
                return Err(CheckpointError::Mismatch(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.dim(),
                    model.params.get(id).dim()
                )));
            }
            model.params.get_mut(id).assign(t);
            loaded += 1;
        }
        if loaded == 0 {
            return Err(CheckpointError::Mismatch("empty checkpoint".into()));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uplift::{ModelConfig, UpliftInput};

    #[test]
    fn checkpoint_roundtrip_preserves_model_bitwise() {
        let model = UpliftModel::new(ModelConfig::tiny(), 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model
            .to_checkpoint(serde_json::json!({"epoch": 3}))
            .save(&path)
            .unwrap();
        let ckpt = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt.meta["epoch"], 3);
        let back = UpliftModel::from_checkpoint(&ckpt).unwrap();
        assert_eq!(model.params, back.params);

        let input = UpliftInput {
            times_s: vec![0.0, 0.05, 0.1],
            ball_norm: vec![[0.3, 0.2], [0.35, 0.22], [0.4, 0.25]],
            keypoints_norm: vec![(0, [0.1, 0.3]), (5, [0.5, 0.31])],
        };
        assert_eq!(
            model.forward(&input).unwrap(),
            back.forward(&input).unwrap()
        );
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTTACKPT-----").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::BadMagic)
        ));
    }
}
