//! Weight file format.
//!
//! Layout: 8-byte magic `ADVWGT01`, a u32-le length-prefixed JSON manifest
//! (architecture, fingerprint, tensor names/shapes, training seed,
//! adversarially-trained flag), then the tensor payloads as little-endian f64
//! in manifest order. Saving a loaded file reproduces it byte for byte.

use crate::error::{Error, Result};
use crate::model::{ModelArch, ModelWeights};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ADVWGT01";

#[derive(Debug, Serialize, Deserialize)]
struct WeightManifest {
    fingerprint: String,
    arch: ModelArch,
    tensors: Vec<TensorEntry>,
    training_seed: u64,
    adversarially_trained: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Serializes weights into any writer.
pub fn write_weights(out: &mut impl Write, weights: &ModelWeights) -> Result<()> {
    let manifest = WeightManifest {
        fingerprint: weights.arch.fingerprint(),
        arch: weights.arch.clone(),
        tensors: weights
            .tensors()
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        training_seed: weights.training_seed,
        adversarially_trained: weights.adversarially_trained,
    };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| Error::Format(format!("manifest: {e}")))?;

    out.write_all(MAGIC)?;
    out.write_all(&(manifest_json.len() as u32).to_le_bytes())?;
    out.write_all(&manifest_json)?;
    for (_, t) in weights.tensors() {
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_weights(path: &Path, weights: &ModelWeights) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_weights(&mut file, weights)?;
    file.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let mut reader = std::io::BufReader::new(std::fs::File::open(path)?);

    let mut magic = [0u8; 8];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("file shorter than the magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }

    let manifest_len = super::read_exact_u32_le(&mut reader, "manifest length")? as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    reader
        .read_exact(&mut manifest_bytes)
        .map_err(|_| Error::Format("truncated manifest".into()))?;
    let manifest: WeightManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Format(format!("manifest json: {e}")))?;
    if manifest.fingerprint != manifest.arch.fingerprint() {
        return Err(Error::Format(format!(
            "fingerprint {:?} does not match architecture {:?}",
            manifest.fingerprint,
            manifest.arch.fingerprint()
        )));
    }

    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let expected: usize = manifest
        .tensors
        .iter()
        .map(|e| e.shape.iter().product::<usize>() * 8)
        .sum();
    if body.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, manifest implies {expected}",
            body.len()
        )));
    }

    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut offset = 0usize;
    for entry in &manifest.tensors {
        let numel: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let off = offset + i * 8;
            data.push(f64::from_le_bytes(
                body[off..off + 8].try_into().expect("length checked"),
            ));
        }
        offset += numel * 8;
        let t = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| Error::Format(format!("tensor {}: {e}", entry.name)))?;
        tensors.push((entry.name.clone(), t));
    }

    ModelWeights::from_parts(
        manifest.arch,
        tensors,
        manifest.training_seed,
        manifest.adversarially_trained,
    )
    .map_err(|e| Error::Format(format!("inconsistent weight file: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn round_trip_preserves_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.advwgt");
        let w = init_model(&ModelArch::default(), 7).unwrap();
        save_weights(&path, &w).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(loaded, w);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.advwgt");
        let p2 = dir.path().join("b.advwgt");
        let w = init_model(&ModelArch::default(), 3).unwrap();
        save_weights(&p1, &w).unwrap();
        let loaded = load_weights(&p1).unwrap();
        save_weights(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn version_mismatch_names_the_expected_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.advwgt");
        std::fs::write(&path, b"ADVWGT99xxxxxxxxxxxx").unwrap();
        match load_weights(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("ADVWGT01"), "message: {msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected_with_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.advwgt");
        let w = init_model(&ModelArch::default(), 3).unwrap();
        save_weights(&path, &w).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        match load_weights(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("bytes"), "message: {msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
