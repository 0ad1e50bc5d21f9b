//! Single-file checkpoints: a JSON header (training config, tensor index,
//! dataset reference) followed by raw little-endian f64 tensor data.
//!
//! Layout: `b"MRSNETCK"`, `u32` format version, `u64` header length, header
//! bytes, tensor data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use mrsnet_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::params::{ParamKind, ParamStore};

const MAGIC: &[u8; 8] = b"MRSNETCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StoredKind {
    Trainable,
    Buffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    kind: StoredKind,
    /// Offset in f64 elements from the start of the data section.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    /// Split file the model was trained on, if any.
    data: Option<PathBuf>,
    tensors: Vec<TensorEntry>,
}

/// Training config and dataset reference stored with a checkpoint.
#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub data: Option<PathBuf>,
}

pub fn save(path: &Path, config: &TrainConfig, data: Option<&Path>, store: &ParamStore) -> Result<()> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for id in store.ids() {
        let t = store.get(id);
        tensors.push(TensorEntry {
            name: store.name(id).to_string(),
            shape: t.shape().to_vec(),
            kind: match store.kind(id) {
                ParamKind::Trainable => StoredKind::Trainable,
                ParamKind::Buffer => StoredKind::Buffer,
            },
            offset,
        });
        offset += t.numel();
    }
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        data: data.map(Path::to_path_buf),
        tensors,
    })?;
    let io = |e| Error::io(path, e);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for id in store.ids() {
        for v in store.get(id).data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<Header> {
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated file"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| bad("truncated file"))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("truncated file"))?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    serde_json::from_slice(&header).map_err(|e| bad(&format!("bad header: {e}")))
}

/// Reads only the header.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let h = read_header(&mut r, path)?;
    Ok(CheckpointMeta {
        config: h.config,
        data: h.data,
    })
}

/// Rebuilds the model from the stored config and loads every tensor. Any
/// disagreement between the stored tensors and the config's layout is an
/// error.
pub fn load(path: &Path) -> Result<(CheckpointMeta, Model)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let header = read_header(&mut r, path)?;
    let mut model = Model::new(header.config.model.clone(), header.config.seed)?;
    let mismatch = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if header.tensors.len() != model.store.len() {
        return Err(mismatch(format!(
            "checkpoint holds {} tensors, config expects {}",
            header.tensors.len(),
            model.store.len()
        )));
    }
    let mut buf = Vec::new();
    for entry in &header.tensors {
        let id = model
            .store
            .find(&entry.name)
            .ok_or_else(|| mismatch(format!("unexpected tensor {}", entry.name)))?;
        let expected = model.store.get(id).shape().to_vec();
        if expected != entry.shape {
            return Err(mismatch(format!(
                "{}: stored shape {:?}, config expects {expected:?}",
                entry.name, entry.shape
            )));
        }
        let n: usize = entry.shape.iter().product();
        buf.resize(n * 8, 0);
        r.read_exact(&mut buf)
            .map_err(|_| mismatch("truncated tensor data".into()))?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        model.store.set(id, Tensor::new(entry.shape.clone(), data)?)?;
    }
    Ok((
        CheckpointMeta {
            config: header.config,
            data: header.data,
        },
        model,
    ))
}
