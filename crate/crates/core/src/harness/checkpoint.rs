//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `ICGANCKP`, a little-endian `u32` format version,
//! a `u64` manifest length, the JSON manifest, then the tensor payload as
//! little-endian `f64`. The manifest lists every tensor's name, shape and byte
//! offset into the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::embedding::{Embedder, EmbedderKind, InstanceStore};
use crate::error::{Error, Result};
use crate::harness::datasets::DatasetSpec;
use crate::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::neighborhoods::SelectionResult;
use crate::rng::RngState;
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ICGANCKP";
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub embedder: Embedder,
    /// Conditioning instances the model was trained on.
    pub store: InstanceStore,
    pub train_config: TrainConfig,
    pub dataset: Option<DatasetSpec>,
    pub rng: RngState,
    pub selection: Option<SelectionResult>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedderMeta {
    kind: EmbedderKind,
    input_dim: usize,
    output_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    embedder: EmbedderMeta,
    train_config: TrainConfig,
    dataset: Option<DatasetSpec>,
    rng: RngState,
    selection: Option<SelectionResult>,
    store_labels: Option<Vec<usize>>,
    payload_bytes: usize,
    tensors: Vec<TensorEntry>,
}

fn named<'a>(
    prefix: &str,
    it: impl Iterator<Item = (&'a str, &'a Tensor)>,
) -> Vec<(String, &'a Tensor)> {
    it.map(|(n, t)| (format!("{prefix}/{n}"), t)).collect()
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors = named("generator", ckpt.generator.params().iter());
    tensors.extend(named("discriminator", ckpt.discriminator.params().iter()));
    if let Some(p) = ckpt.embedder.projection() {
        tensors.push(("embedder/projection".into(), p));
    }
    if let Some(m) = ckpt.embedder.mean() {
        tensors.push(("embedder/mean".into(), m));
    }
    tensors.push(("store/features".into(), ckpt.store.features()));
    tensors.push(("store/raw".into(), ckpt.store.raw()));

    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        generator: ckpt.generator.config().clone(),
        discriminator: ckpt.discriminator.config().clone(),
        embedder: EmbedderMeta {
            kind: ckpt.embedder.kind(),
            input_dim: ckpt.embedder.input_dim(),
            output_dim: ckpt.embedder.output_dim(),
        },
        train_config: ckpt.train_config.clone(),
        dataset: ckpt.dataset.clone(),
        rng: ckpt.rng,
        selection: ckpt.selection.clone(),
        store_labels: ckpt.store.labels().map(<[usize]>::to_vec),
        payload_bytes: payload.len(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let manifest_end = HEADER_LEN.saturating_add(manifest_len);
    if bytes.len() < manifest_end {
        return Err(Error::Truncated {
            expected: manifest_end,
            found: bytes.len(),
        });
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
        .map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;
    let expected = manifest_end + manifest.payload_bytes;
    if bytes.len() != expected {
        return Err(if bytes.len() < expected {
            Error::Truncated {
                expected,
                found: bytes.len(),
            }
        } else {
            Error::Corrupt(format!("{} trailing bytes", bytes.len() - expected))
        });
    }
    let payload = &bytes[manifest_end..];

    let mut generator = Vec::new();
    let mut discriminator = Vec::new();
    let (mut projection, mut mean, mut features, mut raw) = (None, None, None, None);
    for e in manifest.tensors {
        let count: usize = e.shape.iter().product();
        let end = e.offset + count * 8;
        if end > payload.len() {
            return Err(Error::Corrupt(format!(
                "tensor {} runs past the payload",
                e.name
            )));
        }
        let data = payload[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(e.shape, data)?;
        match e.name.split_once('/') {
            Some(("generator", n)) => generator.push((n.to_string(), t)),
            Some(("discriminator", n)) => discriminator.push((n.to_string(), t)),
            Some(("embedder", "projection")) => projection = Some(t),
            Some(("embedder", "mean")) => mean = Some(t),
            Some(("store", "features")) => features = Some(t),
            Some(("store", "raw")) => raw = Some(t),
            _ => return Err(Error::Corrupt(format!("unexpected tensor {}", e.name))),
        }
    }
    let missing = |what: &str| Error::Corrupt(format!("checkpoint lacks {what}"));
    let m = manifest.embedder;
    Ok(Checkpoint {
        generator: Generator::from_params(manifest.generator, generator)?,
        discriminator: Discriminator::from_params(manifest.discriminator, discriminator)?,
        embedder: Embedder::from_parts(m.kind, m.input_dim, m.output_dim, projection, mean)?,
        store: InstanceStore::new(
            features.ok_or_else(|| missing("store features"))?,
            manifest.store_labels,
            raw.ok_or_else(|| missing("store samples"))?,
        )?,
        train_config: manifest.train_config,
        dataset: manifest.dataset,
        rng: manifest.rng,
        selection: manifest.selection,
    })
}

/// Writes through a temporary sibling file so a failed save never leaves a
/// partial checkpoint at `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
