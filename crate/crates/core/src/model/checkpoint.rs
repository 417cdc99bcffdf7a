use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layout::{Layout, TensorSpec};
use super::{param_count, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RTCKPT01";
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub epochs: usize,
    pub step: usize,
}

/// Model configuration, flat parameters, and how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Tensors in [`Layout`] order.
    pub params: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    provenance: Provenance,
    tensors: Vec<TensorSpec>,
}

impl Checkpoint {
    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout().get(name).map(|s| &self.params[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout().get(name)?.range();
        Some(&mut self.params[r])
    }

    /// Rounds every parameter to the nearest `f32`, the storage precision.
    pub fn round_to_storage(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    /// Self-describing container: magic, little-endian u64 header length,
    /// JSON header (config, provenance, tensor names and shapes), then every
    /// tensor as little-endian `f32` in header order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = self.layout();
        let header = serde_json::to_vec(&Header {
            config: self.config,
            provenance: self.provenance,
            tensors: layout.specs().to_vec(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| Error::Format {
            what: "checkpoint",
            detail: detail.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        header.config.validate()?;
        let layout = Layout::new(&header.config);
        let expected: Vec<(&str, &[usize])> = layout.specs().iter().map(|s| (s.name.as_str(), s.shape.as_slice())).collect();
        let found: Vec<(&str, &[usize])> = header.tensors.iter().map(|s| (s.name.as_str(), s.shape.as_slice())).collect();
        if expected != found {
            return Err(bad("tensor table does not match config"));
        }
        let data = &bytes[16 + hlen..];
        if data.len() != 4 * layout.total() {
            return Err(bad("tensor payload has wrong length"));
        }
        let params = data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok(Checkpoint {
            config: header.config,
            params,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized container, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

/// N(0, 0.02) weights with residual output projections scaled by
/// 1/sqrt(2 * layers); zero biases; unit layer-norm gains.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut params = vec![0.0; layout.total()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let residual_std = INIT_STD / (2.0 * config.num_layers as f64).sqrt();
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let residual = Normal::new(0.0, residual_std).expect("valid std");
    for spec in layout.specs() {
        let slot = &mut params[spec.range()];
        let name = spec.name.as_str();
        if name.ends_with(".g") {
            slot.fill(1.0);
        } else if name.ends_with(".b") {
            // biases and layer-norm shifts stay zero
        } else if name.ends_with("attn.proj.w") || name.ends_with("mlp.proj.w") {
            slot.iter_mut().for_each(|x| *x = residual.sample(&mut rng));
        } else {
            slot.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        }
    }
    let mut ckpt = Checkpoint {
        config: *config,
        params,
        provenance: Provenance {
            seed,
            epochs: 0,
            step: 0,
        },
    };
    ckpt.round_to_storage();
    debug_assert_eq!(ckpt.params.len(), param_count(config));
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig::new(2, 16, 2, 40, 12)
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_model(&cfg(), 5).unwrap();
        let b = init_model(&cfg(), 5).unwrap();
        let c = init_model(&cfg(), 6).unwrap();
        assert_eq!(a.params, b.params);
        let sum = |k: &Checkpoint| k.tensor("wte").unwrap().iter().sum::<f64>();
        assert_ne!(sum(&a), sum(&c));
    }

    #[test]
    fn tensor_sizes_sum_to_param_count() {
        let a = init_model(&cfg(), 0).unwrap();
        let total: usize = a.layout().specs().iter().map(TensorSpec::numel).sum();
        assert_eq!(total, param_count(&cfg()));
        assert_eq!(a.params.len(), total);
        assert!(a.tensor("h0.ln1.g").unwrap().iter().all(|&x| x == 1.0));
        assert!(a.tensor("h1.mlp.fc.b").unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn serialization_reloads_exactly() {
        let a = init_model(&cfg(), 1).unwrap();
        let bytes = a.to_bytes().unwrap();
        let b = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        a.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), a);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let a = init_model(&cfg(), 1).unwrap();
        let mut bytes = a.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
