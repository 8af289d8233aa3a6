//! Self-describing checkpoint container: magic bytes, a little-endian `u32`
//! header length, a JSON header (config, vocabulary, tensor table, optimizer
//! state) and then every tensor as raw little-endian `f64`.

use crate::model::CaptionModel;
use crate::tape::Mat;
use crate::train::{AdamW, AdamWConfig};
use crate::{ModelConfig, ModelError};
use serde::{Deserialize, Serialize};
use shotcap_core::pipeline::Vocabulary;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SHOTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
    #[serde(default)]
    trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerInfo {
    config: AdamWConfig,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocab: Option<Vec<String>>,
    tensors: Vec<TensorInfo>,
    optimizer: Option<OptimizerInfo>,
}

pub struct Checkpoint {
    pub model: CaptionModel,
    pub optimizer: Option<AdamW>,
    pub vocab: Option<Vocabulary>,
}

const MOMENT_M: &str = "optimizer.m/";
const MOMENT_V: &str = "optimizer.v/";

pub fn write_checkpoint<W: Write>(
    mut w: W,
    model: &CaptionModel,
    optimizer: Option<&AdamW>,
    vocab: Option<&Vocabulary>,
) -> Result<(), ModelError> {
    let mut tensors: Vec<(String, &Mat, bool)> = model
        .params
        .entries()
        .iter()
        .map(|e| (e.name.clone(), &e.value, e.trainable))
        .collect();
    if let Some(opt) = optimizer {
        for (e, (m, v)) in model.params.entries().iter().zip(opt.m.iter().zip(&opt.v)) {
            tensors.push((format!("{MOMENT_M}{}", e.name), m, false));
            tensors.push((format!("{MOMENT_V}{}", e.name), v, false));
        }
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocab: vocab.map(|v| v.tokens().to_vec()),
        tensors: tensors
            .iter()
            .map(|(name, m, trainable)| TensorInfo {
                name: name.clone(),
                rows: m.nrows(),
                cols: m.ncols(),
                trainable: *trainable,
            })
            .collect(),
        optimizer: optimizer.map(|o| OptimizerInfo {
            config: o.config,
            step: o.step,
        }),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, m, _) in &tensors {
        for &x in m.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| bad("truncated header"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let mut model = CaptionModel::new(header.config.clone())?;
    let mut optimizer = header.optimizer.as_ref().map(|o| {
        let mut a = AdamW::new(o.config, &model.params);
        a.step = o.step;
        a
    });
    let mut seen = vec![false; model.params.len()];
    let mut buf = [0u8; 8];
    for info in &header.tensors {
        let mut m = Mat::zeros((info.rows, info.cols));
        for x in m.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| bad("truncated tensor data"))?;
            *x = f64::from_le_bytes(buf);
        }
        let (base, slot) = if let Some(n) = info.name.strip_prefix(MOMENT_M) {
            (n, Some(0))
        } else if let Some(n) = info.name.strip_prefix(MOMENT_V) {
            (n, Some(1))
        } else {
            (info.name.as_str(), None)
        };
        let id = model
            .params
            .id_of(base)
            .ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor {}", info.name)))?;
        if model.params.value(id).dim() != m.dim() {
            return Err(ModelError::Checkpoint(format!(
                "tensor {} has shape {:?}, model expects {:?}",
                info.name,
                m.dim(),
                model.params.value(id).dim()
            )));
        }
        match (slot, optimizer.as_mut()) {
            (None, _) => {
                *model.params.value_mut(id) = m;
                model.params.set_trainable(id, info.trainable);
                seen[id.0] = true;
            }
            (Some(0), Some(o)) => o.m[id.0] = m,
            (Some(_), Some(o)) => o.v[id.0] = m,
            (Some(_), None) => return Err(bad("optimizer moments without optimizer state")),
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(ModelError::Checkpoint(format!(
            "missing tensor {}",
            model.params.entries()[i].name
        )));
    }
    let vocab = header.vocab.map(Vocabulary::from_tokens);
    Ok(Checkpoint {
        model,
        optimizer,
        vocab,
    })
}

pub fn save_checkpoint(
    path: &Path,
    model: &CaptionModel,
    optimizer: Option<&AdamW>,
    vocab: Option<&Vocabulary>,
) -> Result<(), ModelError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, model, optimizer, vocab)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
