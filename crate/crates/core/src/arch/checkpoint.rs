//! Checkpoint file: `EEGM2CKP` magic, u32 version, u64 header length, a TOML
//! header, then the parameter tensors (and optional optimizer moments) in the
//! engine's binary tensor format, all little-endian.

use std::path::Path;

use diffcore::serialize::{decode_prefix, encode};
use diffcore::{DType, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, Eegm2};
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const MAGIC: [u8; 8] = *b"EEGM2CKP";
pub const VERSION: u32 = 1;
const MAX_HEADER: usize = 1 << 20;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    dtype: String,
    step: u64,
    epoch: usize,
    has_moments: bool,
    params: Vec<String>,
    arch: ArchConfig,
}

/// Adam first and second moments, aligned with the parameter list.
#[derive(Clone)]
pub struct Moments<R> {
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
}

pub struct Checkpoint<R> {
    pub arch: ArchConfig,
    pub params: ParamStore<R>,
    pub step: u64,
    pub epoch: usize,
    pub moments: Option<Moments<R>>,
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint(msg.into()))
}

impl<R: Real> Checkpoint<R> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: "eegm2-checkpoint".into(),
            dtype: R::DTYPE.name().into(),
            step: self.step,
            epoch: self.epoch,
            has_moments: self.moments.is_some(),
            params: self.params.names().to_vec(),
            arch: self.arch.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for t in self.params.values() {
            encode(t, &mut out);
        }
        if let Some(mo) = &self.moments {
            for t in mo.m.iter().chain(&mo.v) {
                encode(t, &mut out);
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint; tensors stored at another precision are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || bytes[..8] != MAGIC {
            return bad("missing EEGM2CKP magic");
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return bad(format!("unsupported version {version}"));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let hlen = usize::try_from(hlen).ok().filter(|&h| h <= MAX_HEADER && 20 + h <= bytes.len());
        let Some(hlen) = hlen else {
            return bad("header length out of range");
        };
        let text = std::str::from_utf8(&bytes[20..20 + hlen]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let header: Header = toml::from_str(text).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.format != "eegm2-checkpoint" {
            return bad(format!("unexpected format tag `{}`", header.format));
        }
        header
            .dtype
            .parse::<DType>()
            .map_err(Error::Checkpoint)?;
        let n = header.params.len();
        let total = if header.has_moments { 3 * n } else { n };
        let mut pos = 20 + hlen;
        let mut tensors = Vec::with_capacity(total.min(bytes.len() / 16));
        for i in 0..total {
            let (t, used) = decode_prefix(&bytes[pos..]).map_err(|e| Error::Checkpoint(format!("tensor {i}: {e}")))?;
            tensors.push(t.cast::<R>()?);
            pos += used;
        }
        if pos != bytes.len() {
            return bad(format!("{} trailing bytes", bytes.len() - pos));
        }
        let mut params = ParamStore::new();
        let mut rest = tensors.split_off(n);
        for (name, t) in header.params.iter().zip(tensors) {
            params.add(name.clone(), t).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        let moments = if header.has_moments {
            let v = rest.split_off(n);
            for (i, (m, v)) in rest.iter().zip(&v).enumerate() {
                let shape = params.get(i).shape();
                if m.shape() != shape || v.shape() != shape {
                    return bad(format!("moment shapes differ from parameter `{}`", params.name(i)));
                }
            }
            Some(Moments { m: rest, v })
        } else {
            None
        };
        Ok(Checkpoint {
            arch: header.arch,
            params,
            step: header.step,
            epoch: header.epoch,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::file(path, e))
    }

    /// Rebuilds the network and checks every stored tensor against it.
    pub fn into_model(self) -> Result<(Eegm2, ParamStore<R>, Self)> {
        self.arch.validate()?;
        let (model, fresh) = Eegm2::new::<R>(&self.arch, 0)?;
        if fresh.names() != self.params.names() {
            return bad("parameter names do not match the architecture in the header");
        }
        for i in 0..fresh.len() {
            if fresh.get(i).shape() != self.params.get(i).shape() {
                return bad(format!(
                    "parameter `{}` has shape {:?}, architecture needs {:?}",
                    fresh.name(i),
                    self.params.get(i).shape(),
                    fresh.get(i).shape()
                ));
            }
        }
        let params = self.params.clone();
        Ok((model, params, self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let arch = ArchConfig::tiny(2);
        let (_, params) = Eegm2::new::<f32>(&arch, 5).unwrap();
        Checkpoint { arch, params, step: 12, epoch: 3, moments: None }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.step, 12);
        assert_eq!(back.params.fingerprint(), ck.params.fingerprint());
        assert_eq!(back.arch, ck.arch);
        let (_, p, _) = back.into_model().unwrap();
        assert_eq!(p.count(), ck.arch.param_count());
    }

    #[test]
    fn moments_survive() {
        let mut ck = sample();
        let m: Vec<_> = ck.params.values().iter().map(|t| t.map(|v| v * 0.5).unwrap()).collect();
        ck.moments = Some(Moments { m: m.clone(), v: m });
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let mo = back.moments.unwrap();
        assert_eq!(mo.m[3], ck.moments.as_ref().unwrap().m[3]);
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::<f32>::from_bytes(b"EEGM2CKP\x01\0\0\0\xff\xff\xff\xff\xff\xff\xff\xff").is_err());
        assert!(Checkpoint::<f32>::from_bytes(b"nope").is_err());
    }
}
