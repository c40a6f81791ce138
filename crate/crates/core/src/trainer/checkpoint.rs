//! Binary checkpoint format.
//!
//! ```text
//! magic (8 bytes) | version u32 LE | header length u64 LE | header JSON
//! | payload (little-endian f64) | SHA-256 of everything before it
//! ```
//!
//! The header holds both configs, the vocabulary hash, progress counters
//! and a manifest mapping every tensor name to its shape and payload
//! offset. Adam moments are stored as extra manifest entries.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Gtae, ModelState, TrainConfig, Validation};
use crate::autodiff::{Adam, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::transformer::ModelConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GTAECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Param,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: Kind,
    shape: Vec<usize>,
    /// Offset in values (not bytes) from the payload start.
    offset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    model: ModelConfig,
    train: TrainConfig,
    vocab_size: usize,
    vocab_hash: String,
    warmup_done: usize,
    train_done: usize,
    best: Option<Validation>,
    stale: usize,
    manifest: Vec<Entry>,
}

/// Writes `state` (and the config it was trained with) to `path`
/// atomically.
pub fn save_checkpoint(state: &ModelState, train: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut manifest = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    let mut push = |name: &str, kind: Kind, shape: Vec<usize>, data: &[f64], step: Option<u64>| {
        manifest.push(Entry { name: name.to_string(), kind, shape, offset: payload.len(), step });
        payload.extend_from_slice(data);
    };
    for (_, p) in state.store.iter() {
        push(&p.name, Kind::Param, p.value.shape().to_vec(), p.value.data(), None);
    }
    for (id, s) in state.optimizer.states() {
        let p = state.store.get(id);
        push(&p.name, Kind::AdamM, p.value.shape().to_vec(), &s.m, Some(s.t));
        push(&p.name, Kind::AdamV, p.value.shape().to_vec(), &s.v, Some(s.t));
    }
    let header = Header {
        dtype: "f64".into(),
        model: state.model.config.clone(),
        train: train.clone(),
        vocab_size: state.model.vocab_size,
        vocab_hash: state.vocab_hash.clone(),
        warmup_done: state.warmup_done,
        train_done: state.train_done,
        best: state.best,
        stale: state.stale,
        manifest,
    };
    let header = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(24 + header.len() + payload.len() * 8 + DIGEST_LEN);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for v in &payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);

    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Reads a checkpoint. With `expected_vocab_hash`, a checkpoint trained on
/// a different vocabulary is rejected.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_vocab_hash: Option<&str>) -> Result<(ModelState, TrainConfig)> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.len() < 20 + DIGEST_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (file truncated or corrupted)"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("bad header length"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])?;
    if header.dtype != "f64" {
        return Err(corrupt(format!("unsupported payload type {}", header.dtype)));
    }
    if let Some(expected) = expected_vocab_hash {
        if expected != header.vocab_hash {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch: checkpoint {} vs dataset {}",
                header.vocab_hash, expected
            )));
        }
    }
    let payload = &body[header_end..];
    if payload.len() % 8 != 0 {
        return Err(corrupt("payload is not a whole number of values"));
    }
    let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();

    let (model, mut store) = Gtae::build(&header.model, header.vocab_size, 0)?;
    let mut optimizer = Adam::new(header.train.learning_rate);
    let mut loaded = vec![false; store.len()];
    let mut moments: Vec<(Option<Vec<f64>>, Option<Vec<f64>>, u64)> = vec![(None, None, 0); store.len()];
    for e in &header.manifest {
        let id = store.find(&e.name).ok_or_else(|| corrupt(format!("unknown tensor {}", e.name)))?;
        if store.value(id).shape() != e.shape.as_slice() {
            return Err(corrupt(format!("shape of {} is {:?}, model expects {:?}", e.name, e.shape, store.value(id).shape())));
        }
        let n: usize = e.shape.iter().product();
        let data = values.get(e.offset..e.offset + n).ok_or_else(|| corrupt(format!("{} lies outside the payload", e.name)))?;
        match e.kind {
            Kind::Param => {
                *store.value_mut(id) = Tensor::new(e.shape.clone(), data.to_vec())?;
                loaded[id.index()] = true;
            }
            Kind::AdamM => {
                moments[id.index()].0 = Some(data.to_vec());
                moments[id.index()].2 = e.step.unwrap_or(0);
            }
            Kind::AdamV => moments[id.index()].1 = Some(data.to_vec()),
        }
    }
    if let Some(i) = loaded.iter().position(|&l| !l) {
        return Err(corrupt(format!("missing tensor {}", store.get(crate::autodiff::ParamId(i)).name)));
    }
    for (i, (m, v, t)) in moments.into_iter().enumerate() {
        match (m, v) {
            (Some(m), Some(v)) => optimizer.set_state(crate::autodiff::ParamId(i), AdamState { m, v, t }),
            (None, None) => {}
            _ => return Err(corrupt("incomplete optimizer state")),
        }
    }
    let state = ModelState {
        model,
        store,
        optimizer,
        warmup_done: header.warmup_done,
        train_done: header.train_done,
        best: header.best,
        stale: header.stale,
        vocab_hash: header.vocab_hash,
    };
    Ok((state, header.train))
}
