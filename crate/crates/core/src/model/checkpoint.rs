//! Checkpoint container: JSON header (spec, shapes, checksum) plus a raw
//! little-endian f32 parameter blob.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

use super::net::{ModelParams, Param};
use super::spec::ModelSpec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TLCKPT01";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    /// (weight_len, bias_len) per parameterized layer.
    param_lens: Vec<(usize, usize)>,
    /// Hex SHA-256 of the parameter blob.
    checksum: String,
}

fn blob_of(params: &ModelParams<f32>) -> Vec<u8> {
    let mut blob = Vec::with_capacity(params.scalar_count() * 4);
    for p in &params.params {
        for &v in p.w.iter().chain(&p.b) {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    blob
}

pub fn save_checkpoint(path: impl AsRef<Path>, spec: &ModelSpec, params: &ModelParams<f32>) -> Result<()> {
    let blob = blob_of(params);
    let header = Header {
        spec: spec.clone(),
        param_lens: params.params.iter().map(|p| (p.w.len(), p.b.len())).collect(),
        checksum: hex_digest(&blob),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    f.write_all(&blob)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelSpec, ModelParams<f32>)> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)?;
    let mut blob = Vec::new();
    f.read_to_end(&mut blob)?;

    if hex_digest(&blob) != header.checksum {
        return Err(Error::Checkpoint("parameter blob checksum mismatch".into()));
    }
    let expected: usize = header.param_lens.iter().map(|&(w, b)| (w + b) * 4).sum();
    if blob.len() != expected {
        return Err(Error::Checkpoint(format!(
            "blob length {} does not match header ({expected})",
            blob.len()
        )));
    }

    let mut offset = 0;
    let mut read_vec = |len: usize| -> Vec<f32> {
        let out = blob[offset..offset + 4 * len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += 4 * len;
        out
    };
    let mut params = Vec::new();
    for &(w_len, b_len) in &header.param_lens {
        let w = read_vec(w_len);
        let b = read_vec(b_len);
        params.push(Param { w, b });
    }
    let params = ModelParams { params };
    header.spec.validate()?;
    Ok((header.spec, params))
}

fn hex_digest(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, unet_spec, NormKind};

    #[test]
    fn roundtrip_is_bit_exact() {
        let spec = unet_spec(2, 4, 1, NormKind::Affine);
        let mut rng = crate::rng::seed_rng(1);
        let params: ModelParams<f32> = init_params(&spec, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        save_checkpoint(&p, &spec, &params).unwrap();
        let (spec2, params2) = load_checkpoint(&p).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(params2, params);
    }

    #[test]
    fn corrupted_blob_is_rejected() {
        let spec = unet_spec(1, 2, 1, NormKind::Affine);
        let mut rng = crate::rng::seed_rng(2);
        let params: ModelParams<f32> = init_params(&spec, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        save_checkpoint(&p, &spec, &params).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0xff;
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
    }
}
