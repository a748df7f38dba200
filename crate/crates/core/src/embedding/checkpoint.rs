//! Binary model checkpoint.
//!
//! Layout: magic `OFK1`, a little-endian `u32` byte length, a UTF-8 JSON
//! config block of that length, then every parameter tensor in declaration
//! order as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::network::{ModelConfig, Network};
use super::EmbeddingModel;
use crate::error::{Error, Result};
use crate::geometry::Preprocess;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OFK1";

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    model: ModelConfig,
    preprocess: Preprocess,
    loss: LossConfig,
}

pub fn write_checkpoint(model: &EmbeddingModel, mut out: impl Write) -> std::io::Result<()> {
    let block = ConfigBlock {
        model: model.config().clone(),
        preprocess: model.preprocess,
        loss: model.loss,
    };
    let json = serde_json::to_vec(&block).expect("config serializes");
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::new();
    for t in model.net.tensors() {
        buf.clear();
        buf.reserve(t.len() * 4);
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()
}

pub fn read_checkpoint(mut input: impl Read) -> Result<EmbeddingModel> {
    let bad = |m: &str| Error::BadCheckpoint(m.to_string());
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
    let len = u32::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json).map_err(|_| bad("truncated config block"))?;
    let block: ConfigBlock =
        serde_json::from_slice(&json).map_err(|e| Error::BadCheckpoint(format!("config block: {e}")))?;
    block.model.validate()?;
    block.preprocess.validate()?;
    block.loss.validate()?;
    let mut net = Network::<f32>::zeros(&block.model);
    let mut bytes = Vec::new();
    for t in net.tensors_mut() {
        bytes.resize(t.len() * 4, 0);
        input.read_exact(&mut bytes).map_err(|_| bad("truncated tensor data"))?;
        for (v, chunk) in t.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    if !rest.is_empty() {
        return Err(Error::BadCheckpoint(format!("{} trailing bytes", rest.len())));
    }
    if !net.all_finite() {
        return Err(bad("non-finite parameters"));
    }
    Ok(EmbeddingModel {
        preprocess: block.preprocess,
        loss: block.loss,
        net,
    })
}

impl EmbeddingModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_checkpoint(self, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_checkpoint(std::io::BufReader::new(file))
    }
}
