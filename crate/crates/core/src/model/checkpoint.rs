//! Binary checkpoint: `STEALCKP`, u32 format version, u64 header length,
//! JSON header, then every tensor as little-endian f32 in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, Autoencoder};
use crate::error::{Error, Result};
use crate::training::Adam;

const MAGIC: &[u8; 8] = b"STEALCKP";
pub const FORMAT_VERSION: u32 = 1;

/// A model plus, for resumable training, optimizer and sampler state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Autoencoder<f32>,
    pub optimizer: Option<Adam>,
    pub step: u64,
    /// Frozen run configuration (TOML).
    pub config: String,
    pub rng: Option<ChaCha8Rng>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    arch: Architecture,
    step: u64,
    config: String,
    rng: Option<ChaCha8Rng>,
    adam: Option<AdamMeta>,
    /// `(name, length)` of each tensor in payload order.
    tensors: Vec<(String, usize)>,
}

fn tensor_names(model: &Autoencoder<f32>) -> (Vec<String>, Vec<String>) {
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    for (i, l) in model.layers.iter().enumerate() {
        params.push(format!("layer{i}.weight"));
        if !l.bias.is_empty() {
            params.push(format!("layer{i}.bias"));
        }
        if l.norm.is_some() {
            params.push(format!("layer{i}.gamma"));
            params.push(format!("layer{i}.beta"));
            buffers.push(format!("layer{i}.running_mean"));
            buffers.push(format!("layer{i}.running_var"));
        }
    }
    (params, buffers)
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (pnames, bnames) = tensor_names(&self.model);
        let mut tensors: Vec<(String, &[f32])> = Vec::new();
        tensors.extend(pnames.iter().cloned().zip(self.model.parameters()));
        tensors.extend(bnames.iter().cloned().zip(self.model.buffers()));
        if let Some(opt) = &self.optimizer {
            for (name, m) in pnames.iter().zip(&opt.m) {
                tensors.push((format!("adam.m.{name}"), m));
            }
            for (name, v) in pnames.iter().zip(&opt.v) {
                tensors.push((format!("adam.v.{name}"), v));
            }
        }
        let header = Header {
            format: "steal-checkpoint".into(),
            version: FORMAT_VERSION,
            arch: self.model.arch.clone(),
            step: self.step,
            config: self.config.clone(),
            rng: self.rng.clone(),
            adam: self.optimizer.as_ref().map(|o| AdamMeta {
                learning_rate: o.learning_rate,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                t: o.t,
            }),
            tensors: tensors.iter().map(|(n, t)| (n.clone(), t.len())).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = tensors.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt(path, "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(path, format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if hlen > body.len() {
            return Err(corrupt(path, "truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(path, format!("bad header: {e}")))?;
        let mut payload = &body[hlen..];
        let expected: usize = header.tensors.iter().map(|(_, n)| n * 4).sum();
        if payload.len() != expected {
            return Err(corrupt(
                path,
                format!("payload has {} bytes, header describes {expected}", payload.len()),
            ));
        }
        let mut tensors = header.tensors.iter().map(|(name, n)| {
            let (chunk, rest) = payload.split_at(n * 4);
            payload = rest;
            let data: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            (name.clone(), data)
        });

        let mut model = Autoencoder::<f32>::new(header.arch, 0)?;
        let (pnames, bnames) = tensor_names(&model);
        let mut fill = |dst: &mut [f32], want: &str| -> Result<()> {
            let (name, data) = tensors.next().ok_or_else(|| corrupt(path, format!("missing {want}")))?;
            if name != want || data.len() != dst.len() {
                return Err(corrupt(
                    path,
                    format!("expected {want}[{}], found {name}[{}]", dst.len(), data.len()),
                ));
            }
            dst.copy_from_slice(&data);
            Ok(())
        };
        for (dst, name) in model.parameters_mut().into_iter().zip(&pnames) {
            fill(dst, name)?;
        }
        for (dst, name) in model.buffers_mut().into_iter().zip(&bnames) {
            fill(dst, name)?;
        }
        let optimizer = match header.adam {
            Some(meta) => {
                let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
                let mut opt = Adam::new(meta.learning_rate, meta.beta1, meta.beta2, meta.eps, &shapes);
                opt.t = meta.t;
                for (dst, name) in opt.m.iter_mut().zip(&pnames) {
                    fill(dst, &format!("adam.m.{name}"))?;
                }
                for (dst, name) in opt.v.iter_mut().zip(&pnames) {
                    fill(dst, &format!("adam.v.{name}"))?;
                }
                Some(opt)
            }
            None => None,
        };
        if let Some((name, _)) = tensors.next() {
            return Err(corrupt(path, format!("unexpected tensor {name}")));
        }
        Ok(Self {
            model,
            optimizer,
            step: header.step,
            config: header.config,
            rng: header.rng,
        })
    }

    /// Writes atomically via a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;
    use rand::{RngCore, SeedableRng};

    fn sample() -> Checkpoint {
        let mut model = Autoencoder::<f32>::from_preset(Preset::Desk, 3).unwrap();
        for b in model.buffers_mut() {
            b.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.5);
        }
        let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
        let mut opt = Adam::new(1e-3, 0.9, 0.999, 1e-8, &shapes);
        opt.t = 7;
        opt.m[0][0] = 1.5;
        opt.v[1][0] = 2.5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        rng.next_u64();
        Checkpoint {
            model,
            optimizer: Some(opt),
            step: 7,
            config: "seed = 1\n".into(),
            rng: Some(rng),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.model, c.model);
        assert_eq!(back.step, 7);
        assert_eq!(back.config, c.config);
        let (a, b) = (back.optimizer.unwrap(), c.optimizer.unwrap());
        assert_eq!((a.t, &a.m, &a.v), (b.t, &b.m, &b.v));
        assert_eq!(back.rng.unwrap().next_u64(), c.rng.unwrap().next_u64());
        assert_eq!(back_bytes(&bytes), bytes);
    }

    fn back_bytes(bytes: &[u8]) -> Vec<u8> {
        Checkpoint::from_bytes(bytes, Path::new("x"))
            .unwrap()
            .to_bytes()
            .unwrap()
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let p = Path::new("x");
        assert!(Checkpoint::from_bytes(b"hello world, not a checkpoint", p).is_err());
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4], p).is_err());
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(Checkpoint::from_bytes(&v, p)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn model_only_checkpoint() {
        let mut c = sample();
        c.optimizer = None;
        c.rng = None;
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap(), Path::new("x")).unwrap();
        assert!(back.optimizer.is_none() && back.rng.is_none());
        assert_eq!(back.model, c.model);
    }
}
