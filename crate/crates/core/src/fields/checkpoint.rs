//! Field checkpoints: a JSON header describing the model followed by raw
//! little-endian f64 parameter blocks. Reload is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"WFCKPT01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("payload truncated")]
    Truncated,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct Header {
    pub kind: String,
    pub meta: Value,
    pub blocks: Vec<BlockInfo>,
}

pub fn save(
    path: &Path,
    kind: &str,
    meta: Value,
    blocks: &[(String, &[f64])],
) -> Result<(), CheckpointError> {
    let header = Header {
        kind: kind.to_string(),
        meta,
        blocks: blocks
            .iter()
            .map(|(name, data)| BlockInfo { name: name.clone(), len: data.len() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, data) in blocks {
        for v in *data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Header, Vec<Vec<f64>>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::Truncated)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes).map_err(|_| CheckpointError::Truncated)?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
    r.read_exact(&mut header_bytes).map_err(|_| CheckpointError::Truncated)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for info in &header.blocks {
        let mut buf = vec![0u8; info.len * 8];
        r.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated)?;
        blocks.push(
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    Ok((header, blocks))
}
