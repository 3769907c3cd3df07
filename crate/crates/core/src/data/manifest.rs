//! Manifest (TOML) plus one raw payload file per record: little-endian
//! real32 values, channel-major (`C` rows of `n_samples`).

use std::fs;
use std::path::{Path, PathBuf};

use diffcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "eegm2-manifest-v1";
pub const PAYLOAD_FORMAT: &str = "real32-le-channel-major";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    /// payload path, relative to the manifest's directory
    pub file: String,
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub n_samples: usize,
    /// must agree with the manifest when present
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_rate_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub payload: String,
    pub name: String,
    pub sampling_rate_hz: f64,
    pub channels: usize,
    #[serde(default)]
    pub records: Vec<RecordMeta>,
}

fn record_err(rec: &RecordMeta, msg: impl Into<String>) -> Error {
    Error::Record { record: rec.file.clone(), msg: msg.into() }
}

impl Manifest {
    pub fn new(name: impl Into<String>, sampling_rate_hz: f64, channels: usize) -> Self {
        Manifest {
            format: FORMAT.into(),
            payload: PAYLOAD_FORMAT.into(),
            name: name.into(),
            sampling_rate_hz,
            channels,
            records: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {}", e.message())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(format!("manifest serialization: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Config(format!("manifest format `{}` is not `{FORMAT}`", self.format)));
        }
        if self.payload != PAYLOAD_FORMAT {
            return Err(Error::Config(format!("payload format `{}` is not `{PAYLOAD_FORMAT}`", self.payload)));
        }
        if self.channels == 0 {
            return Err(Error::Config("manifest declares zero channels".into()));
        }
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(Error::Config(format!("invalid sampling rate {}", self.sampling_rate_hz)));
        }
        for rec in &self.records {
            if rec.subject_id.trim().is_empty() {
                return Err(record_err(rec, "empty subject_id"));
            }
            if rec.file.is_empty() {
                return Err(record_err(rec, "empty file name"));
            }
            if rec.n_samples == 0 {
                return Err(record_err(rec, "zero samples"));
            }
            if let Some(c) = rec.channels.filter(|&c| c != self.channels) {
                return Err(record_err(rec, format!("{c} channels, manifest declares {}", self.channels)));
            }
            if let Some(fs) = rec.sampling_rate_hz.filter(|&fs| fs != self.sampling_rate_hz) {
                return Err(record_err(rec, format!("sampling rate {fs} Hz, manifest declares {}", self.sampling_rate_hz)));
            }
        }
        Ok(())
    }
}

/// Payload bytes for a `[C, n]` tensor.
pub fn encode_payload(x: &Tensor<f32>) -> Vec<u8> {
    x.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Parses a payload of `channels × n_samples` values; the byte length must
/// match exactly and every value must be finite.
pub fn decode_payload(bytes: &[u8], channels: usize, n_samples: usize) -> Result<Tensor<f32>> {
    let expected = channels
        .checked_mul(n_samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Invalid("payload dimensions overflow".into()))?;
    if bytes.len() != expected {
        let got = bytes.len() / 4 / channels.max(1);
        return Err(Error::Invalid(format!(
            "payload holds {} bytes ({got} samples per channel), expected {expected} ({n_samples} samples)",
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let t = Tensor::new(&[channels, n_samples], values)?;
    t.ensure_finite("payload")?;
    Ok(t)
}

/// One record: metadata and its `[C, n_samples]` signal.
#[derive(Debug, Clone)]
pub struct Record {
    pub meta: RecordMeta,
    pub data: Tensor<f32>,
}

/// Lazily reads payloads in manifest order.
pub struct DatasetReader {
    pub manifest: Manifest,
    root: PathBuf,
    next: usize,
}

impl DatasetReader {
    pub fn read_record(&self, i: usize) -> Result<Record> {
        let meta = self.manifest.records.get(i).ok_or_else(|| Error::Invalid(format!("no record {i}")))?;
        let path = self.root.join(&meta.file);
        let bytes = fs::read(&path).map_err(|e| record_err(meta, format!("{}: {e}", path.display())))?;
        let data = decode_payload(&bytes, self.manifest.channels, meta.n_samples).map_err(|e| record_err(meta, e.to_string()))?;
        Ok(Record { meta: meta.clone(), data })
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.manifest.records.len() {
            return None;
        }
        self.next += 1;
        Some(self.read_record(self.next - 1))
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<DatasetReader> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::file(manifest_path, e))?;
    let manifest = Manifest::parse(&text).map_err(|e| Error::file(manifest_path, e))?;
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(DatasetReader { manifest, root, next: 0 })
}

/// Writes `manifest.toml` and the payloads into `dir`. Existing files are
/// only replaced when `force` is set.
pub fn write_dataset(dir: &Path, manifest: &Manifest, payloads: &[Tensor<f32>], force: bool) -> Result<PathBuf> {
    manifest.validate()?;
    if payloads.len() != manifest.records.len() {
        return Err(Error::Invalid(format!("{} payloads for {} records", payloads.len(), manifest.records.len())));
    }
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let manifest_path = dir.join("manifest.toml");
    let mut targets = vec![manifest_path.clone()];
    targets.extend(manifest.records.iter().map(|r| dir.join(&r.file)));
    if !force {
        if let Some(p) = targets.iter().find(|p| p.exists()) {
            return Err(Error::file(p, "already exists (pass force to overwrite)"));
        }
    }
    for (rec, x) in manifest.records.iter().zip(payloads) {
        if x.shape() != [manifest.channels, rec.n_samples] {
            return Err(record_err(rec, format!("payload shape {:?} disagrees with manifest", x.shape())));
        }
        let path = dir.join(&rec.file);
        fs::write(&path, encode_payload(x)).map_err(|e| Error::file(&path, e))?;
    }
    fs::write(&manifest_path, manifest.to_toml()?).map_err(|e| Error::file(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_length_must_match() {
        let x = Tensor::new(&[2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_payload(&x);
        assert_eq!(decode_payload(&bytes, 2, 3).unwrap().data(), x.data());
        assert!(decode_payload(&bytes, 2, 4).is_err());
        assert!(decode_payload(&bytes[..20], 2, 3).is_err());
    }

    #[test]
    fn per_record_rate_mismatch_names_record() {
        let mut m = Manifest::new("t", 128.0, 2);
        m.records.push(RecordMeta {
            file: "bad.bin".into(),
            subject_id: "s".into(),
            label: None,
            n_samples: 4,
            channels: None,
            sampling_rate_hz: Some(256.0),
        });
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("bad.bin"), "{err}");
    }
}
