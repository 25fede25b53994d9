//! Self-describing model files.
//!
//! Layout: the 8-byte magic `NFLATCKP`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header, then
//! every parameter tensor in header order as row-major little-endian floats
//! of the header's dtype.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::crf::{LabelSchema, TagScheme};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Nflat};
use crate::nn::ModelRng;
use crate::scalar::{DType, Scalar};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 8] = b"NFLATCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub dtype: DType,
    pub config: ModelConfig,
    pub labels: Vec<String>,
    pub scheme: TagScheme,
    pub char_tokens: Vec<String>,
    pub lexicon: Vec<String>,
    pub char_dim: usize,
    pub word_dim: usize,
    pub params: Vec<ParamEntry>,
}

pub fn to_bytes<T: Scalar>(model: &Nflat<T>) -> Result<Vec<u8>> {
    let spec = model.spec();
    let header = Header {
        version: VERSION,
        dtype: T::DTYPE,
        config: spec.config.clone(),
        labels: spec.schema.labels().to_vec(),
        scheme: spec.schema.scheme(),
        char_tokens: spec.char_tokens.clone(),
        lexicon: spec.lexicon.clone(),
        char_dim: spec.char_dim,
        word_dim: spec.word_dim,
        params: model
            .store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + model.store.num_scalars() * T::DTYPE.size_of());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.store.iter() {
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn save<T: Scalar>(model: &Nflat<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

/// Parses the header and returns it with the remaining tensor bytes.
pub fn read_header(mut bytes: &[u8]) -> Result<(Header, &[u8])> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(Error::Checkpoint("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let header: Header =
        serde_json::from_slice(take(&mut bytes, len)?).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.version != version {
        return Err(Error::Checkpoint("header version disagrees with preamble".into()));
    }
    Ok((header, bytes))
}

/// Rebuilds the model; the file's dtype must be `T`.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Nflat<T>> {
    let (header, mut body) = read_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "file stores {:?} parameters, requested {:?}",
            header.dtype,
            T::DTYPE
        )));
    }
    let spec = ModelSpec {
        config: header.config,
        schema: LabelSchema::new(header.labels, header.scheme)?,
        char_tokens: header.char_tokens,
        lexicon: header.lexicon,
        char_dim: header.char_dim,
        word_dim: header.word_dim,
    };
    let mut model = Nflat::from_spec(spec, &mut ModelRng::seed_from_u64(0))?;
    let width = T::DTYPE.size_of();
    let mut params = Vec::with_capacity(header.params.len());
    for entry in header.params {
        let count = numel(&entry.shape);
        let raw = take(&mut body, count * width)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        params.push((entry.name, Tensor::new(entry.shape, data)?));
    }
    if !body.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len())));
    }
    model.load_params(params)?;
    Ok(model)
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Nflat<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// A model of either precision, as stored.
#[derive(Clone, Debug)]
pub enum AnyModel {
    F32(Nflat<f32>),
    F64(Nflat<f64>),
}

pub fn load_any(path: impl AsRef<Path>) -> Result<AnyModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match read_header(&bytes)?.0.dtype {
        DType::F32 => from_bytes(&bytes).map(AnyModel::F32),
        DType::F64 => from_bytes(&bytes).map(AnyModel::F64),
    }
}
