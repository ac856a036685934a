//! Self-describing binary checkpoints.
//!
//! Layout: the 8-byte magic `CXRNCKPT`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every parameter array as little-endian `f64`s in
//! the order listed by the header's `shapes`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::network::{build_network, Network, NetworkConfig};
use super::ModelError;
use crate::nn::Parameterized;

const MAGIC: &[u8; 8] = b"CXRNCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header<C> {
    kind: String,
    config: C,
    shapes: Vec<usize>,
    meta: CheckpointMeta,
}

/// Bookkeeping stored next to the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    /// Free-form annotations (preprocessing mode, fold index, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub meta: CheckpointMeta,
}

pub(crate) fn write_blob<C: Serialize>(
    path: &Path,
    kind: &str,
    config: &C,
    params: &[&[f64]],
    meta: &CheckpointMeta,
) -> Result<(), ModelError> {
    let header = Header {
        kind: kind.to_string(),
        config,
        shapes: params.iter().map(|p| p.len()).collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for p in params {
        for v in p.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn read_blob<C: DeserializeOwned>(
    path: &Path,
    kind: &str,
) -> Result<(C, CheckpointMeta, Vec<Vec<f64>>), ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(format!("{}: {m}", path.display()));
    let mut input = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(bad("header too large"));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header<C> = serde_json::from_slice(&json)?;
    if header.kind != kind {
        return Err(bad(&format!("holds a {:?}, expected {kind:?}", header.kind)));
    }
    let mut params = Vec::with_capacity(header.shapes.len());
    let mut buf = [0u8; 8];
    for &n in &header.shapes {
        let mut p = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut buf).map_err(|_| bad("truncated parameters"))?;
            p.push(f64::from_le_bytes(buf));
        }
        params.push(p);
    }
    if input.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok((header.config, header.meta, params))
}

pub(crate) fn assign_params(target: &mut impl Parameterized, params: Vec<Vec<f64>>) -> Result<(), ModelError> {
    let mut slots = target.params_mut();
    if slots.len() != params.len() || slots.iter().zip(&params).any(|(s, p)| s.len() != p.len()) {
        return Err(ModelError::Checkpoint("parameter shapes do not match the configuration".into()));
    }
    for (slot, p) in slots.iter_mut().zip(params) {
        slot.copy_from_slice(&p);
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, network: &Network, meta: &CheckpointMeta) -> Result<(), ModelError> {
    write_blob(path, "classifier", network.config(), &network.params(), meta)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let (config, meta, params): (NetworkConfig, _, _) = read_blob(path, "classifier")?;
    let mut network = build_network(&config, 0)?;
    assign_params(&mut network, params)?;
    Ok(Checkpoint { network, meta })
}
