//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "QCNNMDL\0"
//! version    u32       MODEL_FORMAT_VERSION
//! header_len u32
//! header     JSON      spec, seed, parameter count, optimizer step/hyper, metadata
//! params     f64 * P
//! moments    f64 * 2P  optimizer m then n (only when the header says so)
//! checksum   32 bytes  SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{NetworkModel, NetworkSpec};
use super::optim::{NAdamHyper, NAdamState};
use crate::error::{Error, Result};
use crate::states::RandomSeed;

pub const MODEL_MAGIC: &[u8; 8] = b"QCNNMDL\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const PREFIX: usize = 16;
const CHECKSUM: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    seed: RandomSeed,
    parameter_count: usize,
    optimizer: Option<OptimizerHeader>,
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    t: u64,
    hyper: NAdamHyper,
}

/// A model together with optional optimizer state and free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub model: NetworkModel,
    pub optimizer: Option<NAdamState>,
    pub meta: BTreeMap<String, String>,
}

impl ModelFile {
    pub fn new(model: NetworkModel) -> Self {
        Self {
            model,
            optimizer: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = self.model.parameter_count();
        if let Some(o) = &self.optimizer {
            if o.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "optimizer state has {} entries, model has {p} parameters",
                    o.len()
                )));
            }
        }
        let header = Header {
            spec: self.model.spec().clone(),
            seed: self.model.seed(),
            parameter_count: p,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                t: o.t,
                hyper: o.hyper,
            }),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let header_len = u32::try_from(json.len())
            .map_err(|_| Error::OutOfRange("model header exceeds 4 GiB".into()))?;
        let mut out = Vec::with_capacity(PREFIX + json.len() + 24 * p + CHECKSUM);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        put(self.model.parameters());
        if let Some(o) = &self.optimizer {
            put(&o.m);
            put(&o.n);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX || &bytes[..8] != MODEL_MAGIC {
            return Err(Error::Corrupt("not a model file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        if bytes.len() < PREFIX + CHECKSUM {
            return Err(Error::Corrupt("checksum mismatch (file truncated)".into()));
        }
        let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM);
        if Sha256::digest(body).as_slice() != stored {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let json = body
            .get(PREFIX..PREFIX + header_len)
            .ok_or_else(|| Error::Corrupt("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(json)?;
        let p = header.parameter_count;
        let blocks = if header.optimizer.is_some() { 3 } else { 1 };
        let payload = &body[PREFIX + header_len..];
        if payload.len() != 8 * p * blocks {
            return Err(Error::Corrupt(format!(
                "payload holds {} bytes, header announces {}",
                payload.len(),
                8 * p * blocks
            )));
        }
        let floats: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let model = NetworkModel::from_parameters(header.spec, floats[..p].to_vec(), header.seed)?;
        let optimizer = header.optimizer.map(|o| NAdamState {
            t: o.t,
            m: floats[p..2 * p].to_vec(),
            n: floats[2 * p..].to_vec(),
            hyper: o.hyper,
        });
        Ok(Self {
            model,
            optimizer,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized container, used as a provenance tag.
    pub fn digest(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        Ok(hex(&bytes[bytes.len() - CHECKSUM..]))
    }
}

pub fn save_model(model: &NetworkModel, path: &Path) -> Result<()> {
    ModelFile::new(model.clone()).save(path)
}

pub fn load_model(path: &Path) -> Result<NetworkModel> {
    Ok(ModelFile::load(path)?.model)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::network::NetworkSpec;

    fn sample_file() -> ModelFile {
        let model = NetworkModel::new(NetworkSpec::conv_dense(14, 7, 3, &[5], 3), RandomSeed(12)).unwrap();
        let mut opt = NAdamState::new(model.parameter_count(), NAdamHyper::default());
        let mut th = model.parameters().to_vec();
        let g: Vec<f64> = (0..th.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        opt.step(&mut th, &g).unwrap();
        let mut f = ModelFile::new(model);
        f.optimizer = Some(opt);
        f.meta.insert("mask".into(), "1101".into());
        f
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qcnn");
        let f = sample_file();
        f.save(&path).unwrap();
        let g = ModelFile::load(&path).unwrap();
        assert_eq!(f, g);
        let x = [0.25; 14];
        assert_eq!(f.model.forward(&x).unwrap(), g.model.forward(&x).unwrap());

        save_model(&f.model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), f.model);
    }

    #[test]
    fn truncation_fails_the_checksum() {
        let bytes = sample_file().to_bytes().unwrap();
        for cut in [1, 8, 40, bytes.len() - 20] {
            let err = ModelFile::from_bytes(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "{err}");
        }
        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert!(matches!(ModelFile::from_bytes(&flipped), Err(Error::Corrupt(_))));
    }

    #[test]
    fn old_version_is_reported() {
        let mut bytes = sample_file().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            ModelFile::from_bytes(&bytes),
            Err(Error::UnsupportedVersion { found: 0, expected: 1 })
        ));
    }
}
