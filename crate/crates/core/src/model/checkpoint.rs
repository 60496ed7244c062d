//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `VSPLCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then every
//! tensor's elements as little-endian `f32` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::predict::Corrector;
use super::{ModelConfig, ModelError, ModelParams};
use crate::textdata::{TextDataError, Vocab, VocabLevel};

pub const MAGIC: &[u8; 8] = b"VSPLCKPT";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 30;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint does not match its config: {0}")]
    Shape(#[from] ModelError),
    #[error("checkpoint vocabulary: {0}")]
    Vocab(#[from] TextDataError),
    #[error("checkpoint weights are not tied: {0}")]
    Tying(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_version: String,
    pub step: u64,
    pub config: ModelConfig,
    pub word_vocab: Vec<String>,
    pub char_vocab: Vec<String>,
    /// The correction output matrix is `word_embedding`; always true.
    pub tied_embeddings: bool,
    pub tensors: Vec<TensorEntry>,
}

/// Short content hash of the parameters, used in model version strings.
pub fn params_digest(params: &ModelParams<f32>) -> String {
    let mut hasher = Sha256::new();
    for (name, t) in params.named_tensors() {
        hasher.update(name.as_bytes());
        for x in &t.data {
            hasher.update(x.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Corrector) -> Result<(), std::io::Error> {
    let tensors = model.params.named_tensors();
    let header = CheckpointHeader {
        model_version: model.model_version.clone(),
        step: model.step,
        config: model.config.clone(),
        word_vocab: model.word_vocab.tokens().to_vec(),
        char_vocab: model.char_vocab.tokens().to_vec(),
        tied_embeddings: true,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::new();
    for (_, t) in tensors {
        buf.clear();
        buf.extend(t.data.iter().flat_map(|x| x.to_le_bytes()));
        w.write_all(&buf)?;
    }
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Corrector, CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: "<stream>".into(),
        source,
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(io)?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(CheckpointError::Header(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))?;

    if !header.tied_embeddings {
        return Err(CheckpointError::Tying("header declares untied embeddings".into()));
    }
    let config = header.config;
    config.validate()?;
    let word_vocab = Vocab::from_tokens(VocabLevel::Word, header.word_vocab)?;
    let char_vocab = Vocab::from_tokens(VocabLevel::Char, header.char_vocab)?;
    if word_vocab.len() != config.v_word || char_vocab.len() != config.v_char {
        return Err(CheckpointError::Header(format!(
            "vocab sizes {}/{} disagree with config {}/{}",
            word_vocab.len(),
            char_vocab.len(),
            config.v_word,
            config.v_char
        )));
    }
    let mut params = ModelParams::<f32>::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape.clone()))
        .collect();
    if let Some(extra) = header.tensors.iter().find(|e| e.name.contains("correct_out")) {
        return Err(CheckpointError::Tying(format!("separate output tensor {}", extra.name)));
    }
    if header.tensors.len() != expected.len() {
        return Err(CheckpointError::Header(format!(
            "{} tensors stored, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(ModelError::Shape(format!(
                "stored {} {:?}, config implies {} {:?}",
                entry.name, entry.shape, name, shape
            ))
            .into());
        }
    }
    let mut bytes = Vec::new();
    for t in params.tensors_mut() {
        bytes.resize(t.len() * 4, 0);
        r.read_exact(&mut bytes).map_err(io)?;
        for (x, chunk) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(CheckpointError::Header("trailing bytes after tensor data".into()));
    }
    params.check_shapes(&config)?;
    Ok(Corrector {
        config,
        params,
        word_vocab,
        char_vocab,
        model_version: header.model_version,
        step: header.step,
    })
}

/// Writes through a temporary file and renames it into place.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &Corrector) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(io)?;
    write_checkpoint(BufWriter::new(file), model).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Corrector, CheckpointError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(BufReader::new(file)).map_err(|e| match e {
        CheckpointError::Io { source, .. } => CheckpointError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Reads only the header, e.g. to report what a checkpoint contains.
pub fn read_header(path: impl AsRef<Path>) -> Result<CheckpointHeader, CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut pre = [0u8; 20];
    r.read_exact(&mut pre).map_err(|_| CheckpointError::BadMagic)?;
    if &pre[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let len = u64::from_le_bytes(pre[12..20].try_into().expect("8 bytes"));
    if len > MAX_HEADER {
        return Err(CheckpointError::Header(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(io)?;
    serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))
}
