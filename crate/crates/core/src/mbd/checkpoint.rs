//! Versioned binary checkpoints: a JSON header (configuration, vocabulary,
//! tensor directory) followed by raw little-endian `f64` data and a SHA-256
//! trailer over everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mbd::model::{ModelConfig, MultiBranchModel, Vocab};
use crate::mbd::MbdError;

const MAGIC: &[u8; 8] = b"D2TMBD1\n";
const TRAILER_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn save_model(model: &MultiBranchModel, path: &Path) -> Result<(), MbdError> {
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.words().to_vec(),
        tensors: model
            .params
            .names
            .iter()
            .zip(&model.params.tensors)
            .map(|(name, t)| TensorMeta { name: name.clone(), rows: t.rows, cols: t.cols })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| MbdError::CheckpointFormat(e.to_string()))?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for tensor in &model.params.tensors {
        for value in &tensor.data {
            bytes.extend_from_slice(&value.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MultiBranchModel, MbdError> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 8 + TRAILER_LEN {
        return Err(MbdError::CheckpointFormat("file too short".to_string()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(MbdError::CheckpointChecksum);
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(MbdError::CheckpointFormat("unrecognized magic".to_string()));
    }
    let mut offset = MAGIC.len();
    let header_len =
        u64::from_le_bytes(body[offset..offset + 8].try_into().unwrap()) as usize;
    offset += 8;
    if body.len() < offset + header_len {
        return Err(MbdError::CheckpointFormat("truncated header".to_string()));
    }
    let header: Header = serde_json::from_slice(&body[offset..offset + header_len])
        .map_err(|e| MbdError::CheckpointFormat(e.to_string()))?;
    offset += header_len;

    let mut model = MultiBranchModel::new(header.config, Vocab::from_words(header.vocab))?;
    if header.tensors.len() != model.params.tensors.len() {
        return Err(MbdError::CheckpointFormat(format!(
            "{} tensors on disk but the configuration defines {}",
            header.tensors.len(),
            model.params.tensors.len()
        )));
    }
    for meta in &header.tensors {
        let id = model.params.id_of(&meta.name).ok_or_else(|| {
            MbdError::CheckpointFormat(format!("unknown tensor {}", meta.name))
        })?;
        let tensor = &mut model.params_mut().tensors[id];
        if tensor.rows != meta.rows || tensor.cols != meta.cols {
            return Err(MbdError::CheckpointFormat(format!(
                "tensor {} is {}x{} on disk but {}x{} in the configuration",
                meta.name, meta.rows, meta.cols, tensor.rows, tensor.cols
            )));
        }
        let len = meta.rows * meta.cols * 8;
        if body.len() < offset + len {
            return Err(MbdError::CheckpointFormat("truncated tensor data".to_string()));
        }
        for (i, chunk) in body[offset..offset + len].chunks_exact(8).enumerate() {
            model.params_mut().tensors[id].data[i] =
                f64::from_le_bytes(chunk.try_into().unwrap());
        }
        offset += len;
    }
    if offset != body.len() {
        return Err(MbdError::CheckpointFormat("trailing bytes after tensor data".to_string()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mbd::model::ModelConfig;

    fn model() -> MultiBranchModel {
        let vocab = Vocab::build(["alpha", "beta", "gamma"].iter().copied(), 16);
        MultiBranchModel::new(ModelConfig::tiny(42), vocab).unwrap()
    }

    #[test]
    fn round_trip_restores_everything_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let original = model();
        save_model(&original, &path).unwrap();
        let restored = load_model(&path).unwrap();
        assert_eq!(restored.config, original.config);
        assert_eq!(restored.vocab.words(), original.vocab.words());
        assert_eq!(restored.params.tensors, original.params.tensors);
        assert_eq!(restored.params.names, original.params.names);
    }

    #[test]
    fn flipping_one_byte_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(MbdError::CheckpointChecksum)));
    }

    #[test]
    fn truncation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 40]).unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn foreign_magic_is_rejected_before_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut bytes = b"NOTMINE\n".to_vec();
        bytes.extend_from_slice(&[0u8; 64]);
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(MbdError::CheckpointFormat(_))));
    }
}
