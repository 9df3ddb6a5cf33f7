//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "STACCAPT"
//! version  u32
//! meta     u64 length + UTF-8 TOML (model manifest, iteration, ...)
//! count    u64
//! count x  name: u32 length + UTF-8 | ndim: u32 | dims: u64 x ndim | values: f64 bits x prod(dims)
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so round trips are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stacca_core::autodiff::{Adam, AdamConfig, ParamStore, Tensor};
use stacca_core::models::{ActorCritic, ModelConfig, ValueNorm};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STACCAPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for x in t.data() {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Artifact("not a stacca parameter file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Artifact(format!("unsupported parameter file version {version}, expected {VERSION}")));
        }
        let meta_len = r.len()?;
        let meta = r.string(meta_len)?;
        let count = r.len()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = r.string(name_len)?;
            let ndim = r.u32()? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| r.len()).collect::<Result<_>>()?;
            let size = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Artifact(format!("tensor `{name}` is too large")))?;
            if size > r.remaining() / 8 {
                return Err(Error::Artifact(format!("tensor `{name}` runs past the end of the file")));
            }
            let data = (0..size).map(|_| r.u64().map(f64::from_bits)).collect::<Result<_>>()?;
            let t = Tensor::new(&shape, data).map_err(|e| Error::Artifact(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(Error::Artifact(format!("{} trailing bytes after the last tensor", r.remaining())));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if n > self.remaining() {
            return Err(Error::Artifact("parameter file is truncated".into()));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Artifact("length does not fit in memory".into()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Artifact("name is not UTF-8".into()))
    }
}

const VALUE_NORM: &str = "stats/value_norm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    /// Training iterations completed when the checkpoint was written.
    iter: usize,
    model: ModelConfig,
}

/// Model checkpoint: manifest with the architecture, every parameter, and
/// the value-normalization statistics.
pub fn model_container(model: &ActorCritic, iter: usize) -> Container {
    let manifest = ModelManifest { iter, model: model.config.clone() };
    let mut tensors: Vec<(String, Tensor)> = model.named_params().into_iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let vn = model.value_norm;
    tensors.push((VALUE_NORM.into(), Tensor::new(&[4], vec![vn.beta, vn.mean, vn.mean_sq, vn.debias]).expect("4 values")));
    Container { meta: toml::to_string(&manifest).expect("manifest serializes"), tensors }
}

pub fn save_model(path: &Path, model: &ActorCritic, iter: usize) -> Result<()> {
    model_container(model, iter).save(path)
}

/// Rebuilds the architecture from the manifest and loads every parameter.
pub fn load_model(path: &Path) -> Result<(ActorCritic, usize)> {
    let c = Container::load(path)?;
    let wrap = |e: String| Error::Artifact(format!("{}: {e}", path.display()));
    let manifest: ModelManifest = toml::from_str(&c.meta).map_err(|e| wrap(format!("bad manifest: {e}")))?;
    manifest.model.validate().map_err(|e| wrap(e.to_string()))?;
    let mut model = ActorCritic::new(&manifest.model, 0).map_err(|e| wrap(e.to_string()))?;
    model.load_named(c.tensors.iter().filter(|(n, _)| n != VALUE_NORM).map(|(n, t)| (n.as_str(), t))).map_err(|e| wrap(e.to_string()))?;
    let vn = c.get(VALUE_NORM).ok_or_else(|| wrap("missing value normalization statistics".into()))?;
    let [beta, mean, mean_sq, debias] = vn.data().try_into().map_err(|_| wrap("value normalization entry must hold 4 values".into()))?;
    model.value_norm = ValueNorm { beta, mean, mean_sq, debias };
    Ok((model, manifest.iter))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerManifest {
    actor: AdamConfig,
    actor_step: u64,
    critic: AdamConfig,
    critic_step: u64,
}

/// Adam moments of both optimizers, keyed by parameter path.
pub fn save_optimizers(path: &Path, model: &ActorCritic, actor: &Adam, critic: &Adam) -> Result<()> {
    let manifest = OptimizerManifest { actor: actor.config, actor_step: actor.step, critic: critic.config, critic_step: critic.step };
    let mut tensors = Vec::new();
    for (store, opt) in [(&model.actor_params, actor), (&model.critic_params, critic)] {
        for (id, name, t) in store.iter() {
            for (kind, moments) in [("m", &opt.m), ("v", &opt.v)] {
                tensors.push((format!("adam/{kind}/{name}"), Tensor::new(t.shape(), moments[id.0].clone())?));
            }
        }
    }
    Container { meta: toml::to_string(&manifest).expect("manifest serializes"), tensors }.save(path)
}

pub fn load_optimizers(path: &Path, model: &ActorCritic) -> Result<(Adam, Adam)> {
    let c = Container::load(path)?;
    let wrap = |e: String| Error::Artifact(format!("{}: {e}", path.display()));
    let manifest: OptimizerManifest = toml::from_str(&c.meta).map_err(|e| wrap(format!("bad manifest: {e}")))?;
    let build = |store: &ParamStore, config: AdamConfig, step: u64| -> Result<Adam> {
        let mut opt = Adam::new(config, store);
        opt.step = step;
        for (id, name, t) in store.iter() {
            for (kind, moments) in [("m", &mut opt.m), ("v", &mut opt.v)] {
                let key = format!("adam/{kind}/{name}");
                let saved = c.get(&key).ok_or_else(|| wrap(format!("missing `{key}`")))?;
                if saved.shape() != t.shape() {
                    return Err(wrap(format!("`{key}` has shape {:?}, expected {:?}", saved.shape(), t.shape())));
                }
                moments[id.0] = saved.data().to_vec();
            }
        }
        Ok(opt)
    };
    Ok((build(&model.actor_params, manifest.actor, manifest.actor_step)?, build(&model.critic_params, manifest.critic, manifest.critic_step)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { d_model: 8, n_heads: 2, d_ff: 8, actor_hidden: 4, critic_hidden: 4, ..ModelConfig::default() }
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let odd = [f64::MIN_POSITIVE, -0.0, 1e-310, f64::MAX, 0.1 + 0.2];
        let c = Container { meta: "x = 1\n".into(), tensors: vec![("a/b".into(), Tensor::new(&[5], odd.to_vec()).unwrap()), ("s".into(), Tensor::scalar(3.0))] };
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.meta, c.meta);
        for ((n1, t1), (n2, t2)) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let bytes = Container { meta: String::new(), tensors: vec![("w".into(), Tensor::zeros(&[2, 2]))] }.to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Container::from_bytes(&wrong).is_err());
        let mut version = bytes.clone();
        version[8] = 9;
        assert!(Container::from_bytes(&version).unwrap_err().to_string().contains("version"));
        let mut extra = bytes;
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
    }

    #[test]
    fn model_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut model = ActorCritic::new(&small(), 5).unwrap();
        model.value_norm.update(&[1.0, -3.0, 2.5]);
        save_model(&path, &model, 7).unwrap();
        let (back, iter) = load_model(&path).unwrap();
        assert_eq!(iter, 7);
        assert_eq!(back, model);
        // saving the loaded model reproduces the file byte for byte
        let again = dir.path().join("again.ckpt");
        save_model(&again, &back, 7).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn architecture_mismatch_is_an_artifact_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = ActorCritic::new(&small(), 5).unwrap();
        let mut c = model_container(&model, 0);
        c.tensors.retain(|(n, _)| !n.starts_with("actor/policy_head"));
        c.save(&path).unwrap();
        let err = load_model(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(load_model(&dir.path().join("missing.ckpt")).is_err());
    }

    #[test]
    fn optimizer_state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("opt.bin");
        let model = ActorCritic::new(&small(), 5).unwrap();
        let mut actor = Adam::new(AdamConfig::with_lr(1e-3), &model.actor_params);
        let critic = Adam::new(AdamConfig::with_lr(2e-3), &model.critic_params);
        actor.step = 3;
        actor.m[0][0] = 0.25;
        actor.v[1][0] = 1e-9;
        save_optimizers(&path, &model, &actor, &critic).unwrap();
        let (a, c) = load_optimizers(&path, &model).unwrap();
        assert_eq!(a, actor);
        assert_eq!(c, critic);
    }
}
