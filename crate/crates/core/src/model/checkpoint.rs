//! Binary checkpoint format.
//!
//! ```text
//! "VBN1"                      4 bytes magic
//! header length               u64, little endian
//! header                      UTF-8 JSON: format version, model config,
//!                             epoch, metrics history, tensor manifest
//! payload                     f32 little endian, tensors in manifest order
//! checksum                    u64 little endian, FNV-1a over the payload
//! ```

use std::hash::Hasher;
use std::io::Write;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::Tensor;
use crate::train::EpochRecord;

const MAGIC: &[u8; 4] = b"VBN1";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Param,
    Buffer,
    Optimizer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: TensorRole,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
}

/// Serialized model state plus the training bookkeeping needed to resume or
/// audit a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<Tensor>,
    pub buffers: Vec<Tensor>,
    /// RMSProp accumulators, one per parameter, or empty.
    pub optimizer: Vec<Tensor>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            config: model.config().clone(),
            params: model.params().into_iter().cloned().collect(),
            buffers: model.buffers().into_iter().cloned().collect(),
            optimizer: Vec::new(),
            epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::zeroed(&self.config)?;
        let names = model.param_names();
        for ((dst, src), name) in model.params_mut().into_iter().zip(&self.params).zip(&names) {
            if dst.shape() != src.shape() {
                return Err(shape_mismatch(name, dst.shape(), src.shape()));
            }
            *dst = src.clone();
        }
        let names = model.buffer_names();
        for ((dst, src), name) in model.buffers_mut().into_iter().zip(&self.buffers).zip(&names) {
            if dst.shape() != src.shape() {
                return Err(shape_mismatch(name, dst.shape(), src.shape()));
            }
            *dst = src.clone();
        }
        Ok(model)
    }

    /// Tensor manifest implied by `config`, in payload order.
    fn expected_entries(config: &ModelConfig, with_optimizer: bool) -> Result<Vec<TensorEntry>> {
        let model = Model::zeroed(config)?;
        let mut out = Vec::new();
        for (name, t) in model.param_names().into_iter().zip(model.params()) {
            out.push(TensorEntry {
                name,
                role: TensorRole::Param,
                shape: t.shape().to_vec(),
            });
        }
        for (name, t) in model.buffer_names().into_iter().zip(model.buffers()) {
            out.push(TensorEntry {
                name,
                role: TensorRole::Buffer,
                shape: t.shape().to_vec(),
            });
        }
        if with_optimizer {
            for (name, t) in model.param_names().into_iter().zip(model.params()) {
                out.push(TensorEntry {
                    name: format!("rmsprop.{name}"),
                    role: TensorRole::Optimizer,
                    shape: t.shape().to_vec(),
                });
            }
        }
        Ok(out)
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().chain(&self.buffers).chain(&self.optimizer)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let with_opt = !self.optimizer.is_empty();
        let entries = Self::expected_entries(&self.config, with_opt)?;
        let tensors: Vec<&Tensor> = self.tensors().collect();
        if entries.len() != tensors.len() {
            return Err(Error::Dimension(format!(
                "checkpoint holds {} tensors, config implies {}",
                tensors.len(),
                entries.len()
            )));
        }
        for (e, t) in entries.iter().zip(&tensors) {
            if e.shape != t.shape() {
                return Err(shape_mismatch(&e.name, &e.shape, t.shape()));
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let payload_len: usize = tensors.iter().map(|t| t.len() * 4).sum();
        let mut out = Vec::with_capacity(4 + 8 + header.len() + payload_len + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let start = out.len();
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = checksum(&out[start..]);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic {
                found: magic.to_vec(),
            }
            .into());
        }
        let header_len = u64::from_le_bytes(cur.take(8, "header length")?.try_into().unwrap());
        let header_len = usize::try_from(header_len)
            .map_err(|_| CheckpointError::Truncated("header length overflows".into()))?;
        let header_bytes = cur.take(header_len, "header")?;
        let text = std::str::from_utf8(header_bytes)
            .map_err(|e| CheckpointError::Header(format!("header is not UTF-8: {e}")))?;
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CheckpointError::Header("missing format_version".into()))?;
        if version != FORMAT_VERSION as u64 {
            return Err(CheckpointError::UnsupportedVersion(version as u32).into());
        }
        let header: Header =
            serde_json::from_value(value).map_err(|e| CheckpointError::Header(e.to_string()))?;
        header
            .config
            .validate()
            .map_err(|e| CheckpointError::Header(format!("embedded config invalid: {e}")))?;

        let with_opt = header.tensors.iter().any(|t| t.role == TensorRole::Optimizer);
        let expected = Self::expected_entries(&header.config, with_opt)?;
        for (i, want) in expected.iter().enumerate() {
            match header.tensors.get(i) {
                Some(got) if got.shape != want.shape || got.role != want.role => {
                    return Err(shape_mismatch(&want.name, &want.shape, &got.shape));
                }
                Some(_) => {}
                None => return Err(shape_mismatch(&want.name, &want.shape, &[])),
            }
        }
        if header.tensors.len() > expected.len() {
            let extra = &header.tensors[expected.len()];
            return Err(shape_mismatch(&extra.name, &[], &extra.shape));
        }

        let payload_len: usize = expected
            .iter()
            .map(|e| e.shape.iter().product::<usize>() * 4)
            .sum();
        let payload = cur.take(payload_len, "tensor payload")?;
        let stored = u64::from_le_bytes(cur.take(8, "checksum")?.try_into().unwrap());
        let computed = checksum(payload);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed }.into());
        }
        if cur.pos != bytes.len() {
            return Err(CheckpointError::TrailingData(bytes.len() - cur.pos).into());
        }

        let mut floats = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        let mut ckpt = Checkpoint {
            config: header.config,
            params: Vec::new(),
            buffers: Vec::new(),
            optimizer: Vec::new(),
            epoch: header.epoch,
            history: header.history,
        };
        for e in expected {
            let n = e.shape.iter().product();
            let data: Vec<f32> = floats.by_ref().take(n).collect();
            let t = Tensor::new(e.shape, data)?;
            match e.role {
                TensorRole::Param => ckpt.params.push(t),
                TensorRole::Buffer => ckpt.buffers.push(t),
                TensorRole::Optimizer => ckpt.optimizer.push(t),
            }
        }
        Ok(ckpt)
    }

    /// Writes atomically: the file appears only once fully written.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.partial");
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn shape_mismatch(name: &str, expected: &[usize], found: &[usize]) -> Error {
    CheckpointError::ShapeMismatch {
        name: name.to_string(),
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
    .into()
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }
}
