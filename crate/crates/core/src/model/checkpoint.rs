//! Checkpoint format: 8-byte magic, u32 little-endian header length, the
//! config as JSON, then every tensor as little-endian f32 in the declared
//! traversal order. Weights are stored at f32 regardless of the training
//! precision; the loader validates sizes against the embedded config.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ModelParams;
use super::scalar::Scalar;
use super::{ModelConfig, ModelError};

const MAGIC: &[u8; 8] = b"ICKPT001";

pub fn save_checkpoint<S: Scalar>(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    params: &ModelParams<S>,
) -> Result<(), ModelError> {
    let header = serde_json::to_vec(config)
        .map_err(|e| ModelError::Checkpoint(format!("config serialization: {e}")))?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    for (_, tensor) in params.tensors() {
        for v in tensor {
            out.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(ModelConfig, ModelParams<f32>), ModelError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad magic {magic:?}; not a checkpoint file"
        )));
    }
    let mut len_bytes = [0u8; 4];
    reader.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    reader.read_exact(&mut header)?;
    let config: ModelConfig = serde_json::from_slice(&header)
        .map_err(|e| ModelError::Checkpoint(format!("bad config header: {e}")))?;
    config.validate()?;

    let mut params = ModelParams::<f32>::zeros(&config);
    for (name, tensor) in params.tensors_mut() {
        let mut buf = vec![0u8; tensor.len() * 4];
        reader.read_exact(&mut buf).map_err(|e| {
            ModelError::Checkpoint(format!("truncated while reading {name}: {e}"))
        })?;
        for (v, chunk) in tensor.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(ModelError::Checkpoint(
            "trailing bytes after the declared tensors".into(),
        ));
    }
    Ok((config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_params;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 25,
            d_model: 8,
            max_tokens: 16,
            max_pages: 4,
            layers: 1,
            heads: 2,
            window: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn roundtrip_preserves_f32_weights() {
        let config = cfg();
        let params = init_params::<f32>(&config);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &config, &params).unwrap();
        let (loaded_cfg, loaded) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_cfg, config);
        assert_eq!(loaded, params);
    }

    #[test]
    fn f64_params_store_as_f32() {
        let config = cfg();
        let params = init_params::<f64>(&config);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &config, &params).unwrap();
        let (_, loaded) = load_checkpoint(&path).unwrap();
        for ((_, a), (_, b)) in loaded.tensors().iter().zip(params.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x, *y as f32);
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ModelError::Checkpoint(_))
        ));

        // Truncated tensor section.
        let config = cfg();
        let params = init_params::<f32>(&config);
        save_checkpoint(&path, &config, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ModelError::Checkpoint(_))
        ));

        // Trailing garbage.
        let mut padded = bytes.clone();
        padded.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, &padded).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ModelError::Checkpoint(_))
        ));
    }
}
